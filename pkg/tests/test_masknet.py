import numpy as np
import pytest

from beamlearn import autodiff as ad
from beamlearn import masknet

F = 9


def rand_spec(rng, d=3, t=12, f=F):
    return rng.normal(size=(d, t, f)) + 1j * rng.normal(size=(d, t, f))


def small_params(seed=0, activation="softmax"):
    return masknet.init_params(F, hidden=8, ff_units=10, seed=seed,
                               activation=activation)


class TestInit:
    def test_shapes_and_meta(self):
        params, meta = small_params()
        assert params["w_out"].shape == (10, 2 * F)
        assert params["wx_fwd"].shape == (F, 8)
        assert meta["activation"] == "softmax"
        assert set(meta["layers"]) == set(params)

    def test_deterministic(self):
        a, _ = small_params(seed=3)
        b, _ = small_params(seed=3)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_bad_activation_rejected(self):
        with pytest.raises(ValueError):
            masknet.init_params(F, activation="tanh")


class TestFeatures:
    def test_normalized_per_channel_and_bin(self):
        rng = np.random.default_rng(0)
        spec = rand_spec(rng)
        feats = masknet.features(spec)
        np.testing.assert_allclose(feats.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(feats.std(axis=1), 1.0, atol=1e-6)

    def test_zero_input_finite(self):
        feats = masknet.features(np.zeros((2, 5, F), complex))
        assert np.all(np.isfinite(feats))


class TestForward:
    def test_softmax_masks_sum_to_one(self):
        rng = np.random.default_rng(1)
        params, _ = small_params()
        tape = ad.Tape()
        per_channel, gamma0 = masknet.forward(tape, params, rand_spec(rng),
                                              "softmax")
        assert per_channel.shape == (3, 2, 12, F)
        assert gamma0.shape == (2, 12, F)
        np.testing.assert_array_equal(gamma0.value.sum(axis=0), 1.0)
        assert np.all(per_channel.value > 0) and np.all(per_channel.value < 1)

    def test_sigmoid_masks_renormalized(self):
        rng = np.random.default_rng(2)
        params, _ = small_params(activation="sigmoid")
        tape = ad.Tape()
        _, gamma0 = masknet.forward(tape, params, rand_spec(rng), "sigmoid")
        np.testing.assert_allclose(gamma0.value.sum(axis=0), 1.0, atol=1e-12)

    def test_identical_channels_identical_masks(self):
        rng = np.random.default_rng(3)
        mono = rand_spec(rng, d=1)
        spec = np.concatenate([mono, mono], axis=0)
        params, _ = small_params()
        tape = ad.Tape()
        per_channel, _ = masknet.forward(tape, params, spec, "softmax")
        np.testing.assert_array_equal(per_channel.value[0],
                                      per_channel.value[1])

    def test_channel_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        spec = rand_spec(rng, d=4)
        params, _ = small_params()
        tape = ad.Tape()
        base, pooled = masknet.forward(tape, params, spec, "softmax")
        perm = [2, 0, 3, 1]
        tape2 = ad.Tape()
        permuted, pooled_p = masknet.forward(tape2, params, spec[perm],
                                             "softmax")
        np.testing.assert_array_equal(permuted.value, base.value[perm])
        np.testing.assert_allclose(pooled_p.value, pooled.value, atol=1e-14)

    def test_gradients_flow_and_are_finite(self):
        rng = np.random.default_rng(5)
        params, _ = small_params()
        tape = ad.Tape()
        _, gamma0 = masknet.forward(tape, params, rand_spec(rng), "softmax")
        loss = ad.sum_(ad.mul(gamma0, gamma0))
        grads = tape.backward(loss)
        assert set(grads) == set(params)
        for k, g in grads.items():
            assert np.all(np.isfinite(g)), k
        assert any(np.linalg.norm(g) > 0 for g in grads.values())


class TestPooling:
    def test_single_channel_identity(self):
        rng = np.random.default_rng(6)
        m = rng.dirichlet(np.ones(2), size=(1, 5, F))
        per_channel = np.transpose(m, (0, 3, 1, 2))
        for mode in ("mean", "median"):
            np.testing.assert_allclose(
                masknet.pool(per_channel, mode), per_channel[0], atol=1e-12)

    def test_median_odd_channels(self):
        vals = np.array([0.2, 0.4, 0.9])
        per_channel = np.zeros((3, 2, 1, 1))
        per_channel[:, 0, 0, 0] = vals
        per_channel[:, 1, 0, 0] = 1 - vals
        pooled = masknet.pool(per_channel, "median")
        assert pooled[0, 0, 0] == pytest.approx(0.4)

    def test_median_even_channels_averages_middle(self):
        per_channel = np.zeros((4, 2, 1, 1))
        per_channel[:, 0, 0, 0] = [0.1, 0.2, 0.4, 0.8]
        per_channel[:, 1, 0, 0] = [0.9, 0.8, 0.6, 0.2]
        pooled = masknet.pool(per_channel, "median")
        assert pooled[0, 0, 0] == pytest.approx(0.3)

    def test_mean_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        per_channel = rng.random(size=(3, 2, 4, 5))
        pooled = masknet.pool(per_channel, "mean")
        loop = np.zeros((2, 4, 5))
        for d in range(3):
            loop += per_channel[d]
        loop /= 3
        loop /= loop.sum(axis=0, keepdims=True)
        np.testing.assert_allclose(pooled, loop, atol=1e-15)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            masknet.pool(np.ones((2, 2, 2, 2)), "max")


class TestWeightPermutation:
    def test_identity_map_is_noop(self):
        params, _ = small_params()
        perm = np.tile([0, 1], (F, 1))
        out = masknet.permute_output_weights(params, perm)
        np.testing.assert_array_equal(out["w_out"], params["w_out"])
        np.testing.assert_array_equal(out["b_out"], params["b_out"])

    def test_full_swap_swaps_classes_exactly(self):
        rng = np.random.default_rng(8)
        params, _ = small_params()
        spec = rand_spec(rng)
        perm = np.tile([1, 0], (F, 1))
        swapped = masknet.permute_output_weights(params, perm)
        tape = ad.Tape()
        base, _ = masknet.forward(tape, params, spec, "softmax")
        tape2 = ad.Tape()
        out, _ = masknet.forward(tape2, swapped, spec, "softmax")
        np.testing.assert_array_equal(out.value, base.value[:, ::-1])

    def test_random_map_equals_posthoc_permutation(self):
        rng = np.random.default_rng(9)
        params, _ = small_params()
        spec = rand_spec(rng)
        perm = np.stack([rng.permutation(2) for _ in range(F)])
        permuted = masknet.permute_output_weights(params, perm)
        tape = ad.Tape()
        base, _ = masknet.forward(tape, params, spec, "softmax")
        tape2 = ad.Tape()
        out, _ = masknet.forward(tape2, permuted, spec, "softmax")
        want = np.empty_like(base.value)
        for fi in range(F):
            for ki in range(2):
                want[:, ki, :, fi] = base.value[:, perm[fi, ki], :, fi]
        np.testing.assert_allclose(out.value, want, atol=1e-15)

    def test_malformed_map_rejected(self):
        params, _ = small_params()
        with pytest.raises(ValueError):
            masknet.permute_output_weights(params, np.ones((F, 2), dtype=int))
        with pytest.raises(ValueError):
            masknet.permute_output_weights(params, np.tile([0, 1], (3, 1)))


class TestInference:
    def test_mean_mode_matches_forward_pooled(self):
        rng = np.random.default_rng(10)
        params, _ = small_params()
        spec = rand_spec(rng)
        got = masknet.infer_masks_net(params, spec, "softmax", "mean")
        tape = ad.Tape()
        _, gamma0 = masknet.forward(tape, params, spec, "softmax")
        np.testing.assert_array_equal(got, gamma0.value)

    def test_median_mode_sums_to_one(self):
        rng = np.random.default_rng(11)
        params, _ = small_params()
        got = masknet.infer_masks_net(params, rand_spec(rng, d=4), "softmax",
                                      "median")
        np.testing.assert_allclose(got.sum(axis=0), 1.0, atol=1e-12)
