import numpy as np
import pytest
from hypothesis import given, strategies as st

from strokepipe.fusion import FusedModel, fuse_predict, fuse_scores
from strokepipe.haralick import FeatureKind, FeatureVector
from strokepipe.svm import DegenerateModelError, FeatureKindMismatch, KernelSpec, SvmModel, score, train


def kind_model(kind, dim, shift=0.0):
    X = [FeatureVector(np.full(dim, v + shift), kind, str(v)) for v in (0.0, 1.0, 2.0, 3.0)]
    return train(X, [-1, -1, 1, 1], KernelSpec.linear())


@pytest.fixture
def fused():
    return FusedModel(kind_model(FeatureKind.HARALICK28, 28), kind_model(FeatureKind.NMF14, 14))


class TestFuseScores:
    @pytest.mark.parametrize(
        "a, b, label, chosen",
        [(0.3, -0.9, -1, "B"), (0.2, 5.0, 1, "B"), (4.0, 0.1, 1, "A"), (0.5, -0.5, 1, "A"), (-0.5, 0.5, -1, "A"),
         (0.0, 0.0, 1, "A")],
    )
    def test_examples(self, a, b, label, chosen):
        assert fuse_scores(a, b) == (label, chosen)

    def test_random_pairs(self):
        r = np.random.default_rng(11)
        pairs = r.normal(scale=r.choice([0.01, 1.0, 100.0], size=(100_000, 1)), size=(100_000, 2))
        for a, b in pairs:
            label, chosen = fuse_scores(a, b)
            winner = b if abs(b) > abs(a) else a
            assert label == (1 if winner >= 0 else -1)
            assert chosen == ("B" if abs(b) > abs(a) else "A")
            if np.sign(a) == np.sign(b) != 0:
                assert label == np.sign(a)

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
    def test_agreement_never_flipped(self, a, b):
        label, _ = fuse_scores(a, b)
        if a > 0 and b > 0:
            assert label == 1
        if a < 0 and b < 0:
            assert label == -1


class TestFusePredict:
    def test_uses_normalized_scores(self, fused):
        xa = FeatureVector(np.full(28, 2.9), FeatureKind.HARALICK28)
        xb = FeatureVector(np.full(14, 0.2), FeatureKind.NMF14)
        res = fuse_predict(fused, xa, xb)
        assert res.score_a == score(fused.model_a, xa)
        assert res.score_b == score(fused.model_b, xb)
        assert res.chosen == ("B" if abs(res.score_b) > abs(res.score_a) else "A")
        assert res.label == (1 if (res.score_b if res.chosen == "B" else res.score_a) >= 0 else -1)

    def test_swapped_inputs_rejected(self, fused):
        xa = FeatureVector(np.zeros(28), FeatureKind.HARALICK28)
        xb = FeatureVector(np.zeros(14), FeatureKind.NMF14)
        with pytest.raises(FeatureKindMismatch):
            fuse_predict(fused, xb, xa)

    def test_same_kind_models_rejected(self):
        m = kind_model(FeatureKind.NMF14, 14)
        with pytest.raises(FeatureKindMismatch):
            FusedModel(m, m)

    def test_degenerate_propagates(self, fused):
        a = fused.model_a
        broken = SvmModel(a.support_vectors, a.alphas, a.labels, a.bias, a.kernel, a.C, a.scaler, 0.0,
                          a.feature_kind)
        with pytest.raises(DegenerateModelError):
            fuse_predict(FusedModel(broken, fused.model_b), FeatureVector(np.zeros(28), FeatureKind.HARALICK28),
                         FeatureVector(np.zeros(14), FeatureKind.NMF14))

    def test_round_trip(self, fused):
        back = FusedModel.from_dict(fused.to_dict())
        xa = FeatureVector(np.full(28, 1.2), FeatureKind.HARALICK28)
        xb = FeatureVector(np.full(14, 1.7), FeatureKind.NMF14)
        assert fuse_predict(back, xa, xb) == fuse_predict(fused, xa, xb)
