import numpy as np
import pytest

from debiasrec.bias import (BiasFeatures, BrmVariant, bias_repr,
                            bias_vectors_backward, bias_vectors_batch,
                            clip_position, init_brm_params)
from debiasrec.core import make_rng
from debiasrec.optim import ParamStore, grad_check


def make_brm(variant, seed=0, p_max=10, bias_dim=4, out_dim=5):
    store = ParamStore()
    params, grads = init_brm_params(store, p_max, bias_dim, out_dim, variant,
                                    make_rng(seed, 1))
    return store, params, grads


class TestVariants:
    def test_none_gives_ones_independent_of_features(self):
        store, params, _ = make_brm(BrmVariant.NONE)
        for pos, size in ((1, 0), (7, 3)):
            np.testing.assert_array_equal(
                bias_repr(BiasFeatures(pos, size), params), np.ones(5))
        assert store.names() == []

    def test_zeroed_tables_leave_projection_bias(self):
        store, params, _ = make_brm(BrmVariant.INTERACTION, seed=1)
        params.pos_emb[...] = 0.0
        params.size_emb[...] = 0.0
        params.proj_b[...] = np.arange(5.0)
        b = bias_repr(BiasFeatures(3, 2), params)
        np.testing.assert_allclose(b, np.arange(5.0), atol=1e-15)

    def test_interaction_matches_scalar_oracle(self):
        store, params, _ = make_brm(BrmVariant.INTERACTION, seed=2)
        f = BiasFeatures(position=3, size=3)
        ep = params.pos_emb[3]
        es = params.size_emb[3]
        x = np.concatenate([ep, es, ep * es])
        expected = params.proj_w @ x + params.proj_b
        np.testing.assert_allclose(bias_repr(f, params), expected, rtol=1e-12)

    def test_linear_concat_matches_oracle(self):
        store, params, _ = make_brm(BrmVariant.LINEAR_CONCAT, seed=3)
        f = BiasFeatures(position=2, size=1)
        x = np.concatenate([params.pos_emb[2], params.size_emb[1]])
        np.testing.assert_allclose(bias_repr(f, params),
                                   params.proj_w @ x + params.proj_b, rtol=1e-12)

    def test_single_feature_variants(self):
        store, params, _ = make_brm(BrmVariant.POSITION_ONLY, seed=4)
        assert params.size_emb is None
        b1 = bias_repr(BiasFeatures(2, 0), params)
        b2 = bias_repr(BiasFeatures(2, 3), params)
        np.testing.assert_array_equal(b1, b2)  # size ignored

        store, params, _ = make_brm(BrmVariant.SIZE_ONLY, seed=5)
        assert params.pos_emb is None
        b1 = bias_repr(BiasFeatures(1, 2), params)
        b2 = bias_repr(BiasFeatures(9, 2), params)
        np.testing.assert_array_equal(b1, b2)  # position ignored

    def test_position_sensitivity_under_interaction(self):
        store, params, _ = make_brm(BrmVariant.INTERACTION, seed=6)
        b3 = bias_repr(BiasFeatures(3, 1), params)
        b4 = bias_repr(BiasFeatures(4, 1), params)
        assert not np.allclose(b3, b4)

    def test_bad_size_errors(self):
        store, params, _ = make_brm(BrmVariant.INTERACTION, seed=7)
        with pytest.raises(ValueError):
            bias_vectors_batch(np.array([1]), np.array([4]), params)
        with pytest.raises(ValueError):
            BiasFeatures(3, 5).validate(10)


def test_clip_position():
    assert clip_position(0, 400) == 1
    assert clip_position(-3, 400) == 1
    assert clip_position(250, 400) == 250
    assert clip_position(1000, 400) == 400


@pytest.mark.parametrize("variant", [BrmVariant.INTERACTION,
                                     BrmVariant.LINEAR_CONCAT,
                                     BrmVariant.POSITION_ONLY,
                                     BrmVariant.SIZE_ONLY])
def test_gradients_pass_gradcheck(variant):
    store, params, grads = make_brm(variant, seed=8)
    positions = np.array([1, 3, 3, 7], dtype=np.int64)
    sizes = np.array([0, 2, 1, 3], dtype=np.int64)
    probe = make_rng(2, 3).normal(size=(4, 5))

    def loss(s):
        s.zero_grads()
        b, cache = bias_vectors_batch(positions, sizes, params)
        bias_vectors_backward(probe, cache, params, grads)
        return float((b * probe).sum())

    report = grad_check(loss, store, eps=1e-5, sample=6, seed=1)
    assert report.max_rel_error < 1e-4, report.format(1e-4)
