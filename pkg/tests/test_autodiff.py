import numpy as np
import pytest

from beamlearn import autodiff as ad
from gradcheck import loss_and_grads, max_rel_error


def rand_pd(rng, *batch, d=3):
    a = rng.normal(size=batch + (d, d)) + 1j * rng.normal(size=batch + (d, d))
    return a @ ad.hconj(a) + d * np.eye(d)


def complexify(x, y):
    return ad.make_complex(x, y)


class TestConventions:
    def test_abs2_gradient_is_2x_2y(self):
        def build(tape, t):
            return ad.sum_(ad.abs2(complexify(t["x"], t["y"])))

        leaves = {"x": np.array([1.0]), "y": np.array([2.0])}
        loss, grads = loss_and_grads(build, leaves)
        assert loss == pytest.approx(5.0)
        np.testing.assert_allclose(grads["x"], [2.0])
        np.testing.assert_allclose(grads["y"], [4.0])

    def test_cotangent_of_logdet_is_half_inverse(self):
        rng = np.random.default_rng(0)
        b = rand_pd(rng, d=3)
        tape = ad.Tape()
        node = tape.leaf(b)
        loss = ad.sum_(ad.log_det_hermitian(node))
        tape.backward(loss)
        np.testing.assert_allclose(
            tape.cotangent(node), 0.5 * np.linalg.inv(b), atol=1e-10)

    def test_backward_requires_real_scalar(self):
        tape = ad.Tape()
        z = tape.leaf(np.array([1.0 + 2.0j, 3.0 - 1.0j]))
        with pytest.raises(ValueError):
            tape.backward(ad.sum_(z))  # complex
        x = tape.leaf(np.array([1.0, 2.0]), "x")
        with pytest.raises(ValueError):
            tape.backward(ad.abs2(x))  # not scalar

    def test_complex_parameters_rejected(self):
        tape = ad.Tape()
        with pytest.raises(ValueError):
            tape.leaf(np.array([1.0 + 1j]), "bad")

    def test_backward_is_pure(self):
        rng = np.random.default_rng(1)
        tape = ad.Tape()
        x = tape.leaf(rng.normal(size=5), "x")
        loss = ad.sum_(ad.mul(ad.tanh(x), x))
        g1 = tape.backward(loss)
        g2 = tape.backward(loss)
        np.testing.assert_array_equal(g1["x"], g2["x"])

    def test_unreached_parameter_gets_zero_gradient(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones(3), "x")
        tape.leaf(np.ones(4), "unused")
        grads = tape.backward(ad.sum_(ad.mul(x, x)))
        assert grads["unused"].shape == (4,)
        np.testing.assert_array_equal(grads["unused"], 0.0)

    def test_mixed_tapes_rejected(self):
        t1, t2 = ad.Tape(), ad.Tape()
        a = t1.leaf(np.ones(2), "a")
        b = t2.leaf(np.ones(2), "b")
        with pytest.raises(ValueError):
            ad.add(a, b)

    def test_primitive_registry_spellings(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([1.0, 2.0]), "x")
        z = tape.record("complex", x, x)
        h = tape.record("hermitian-transpose", ad.reshape(z, (1, 2)))
        assert h.shape == (2, 1)
        n = tape.record("l2-normalize", x)
        np.testing.assert_allclose(
            np.linalg.norm(n.value), 1.0, atol=1e-12)
        assert tape.record("ln", x).value == pytest.approx(np.log([1.0, 2.0]))
        with pytest.raises(ValueError):
            tape.record("no-such-op", x)


class TestElementwiseGradients:
    @pytest.mark.parametrize("fn", [
        lambda t: ad.sum_(ad.log(ad.add(ad.abs2(t), 0.1))),
        lambda t: ad.sum_(ad.exp(ad.real_part(t))),
        lambda t: ad.sum_(ad.abs2(ad.mul(t, ad.conj(t)))),
        lambda t: ad.sum_(ad.abs2(ad.div(t, ad.add(ad.abs2(t), 1.0)))),
        lambda t: ad.sum_(ad.imag_part(ad.mul(t, t))),
        lambda t: ad.sum_(ad.abs2(ad.sqrt(ad.add(ad.abs2(t), 0.5)))),
    ])
    def test_complex_chains(self, fn):
        rng = np.random.default_rng(7)
        leaves = {"x": rng.normal(size=(3, 4)), "y": rng.normal(size=(3, 4))}

        def build(tape, t):
            return fn(complexify(t["x"], t["y"]))

        # quartic terms make central differences noisy near 1e-5
        assert max_rel_error(build, leaves) < 1e-4

    @pytest.mark.parametrize("fn", [
        lambda t: ad.sum_(ad.tanh(t)),
        lambda t: ad.sum_(ad.sigmoid(t)),
        lambda t: ad.sum_(ad.mul(ad.relu(t), t)),
        lambda t: ad.sum_(ad.maximum(t, 0.3)),
        lambda t: ad.sum_(ad.mul(ad.softmax(t, axis=-1), t)),
        lambda t: ad.sum_(ad.logsumexp(t, axis=0)),
        lambda t: ad.mean(ad.mul(t, t)),
    ])
    def test_real_chains(self, fn):
        rng = np.random.default_rng(8)
        leaves = {"x": rng.normal(size=(4, 5))}
        assert max_rel_error(lambda tape, t: fn(t["x"]), leaves) < 1e-6

    def test_holomorphic_square_satisfies_cauchy_riemann(self):
        # for ell = Re(z^2): dl/dx = 2x, dl/dy = -2y
        def build(tape, t):
            z = complexify(t["x"], t["y"])
            return ad.sum_(ad.real_part(ad.mul(z, z)))

        leaves = {"x": np.array([1.5]), "y": np.array([0.7])}
        _, grads = loss_and_grads(build, leaves)
        np.testing.assert_allclose(grads["x"], [3.0], atol=1e-12)
        np.testing.assert_allclose(grads["y"], [-1.4], atol=1e-12)


class TestShapeOps:
    def test_reshape_transpose_getitem_stack_concat(self):
        rng = np.random.default_rng(3)
        leaves = {"x": rng.normal(size=(2, 6)), "y": rng.normal(size=(2, 6))}

        def build(tape, t):
            z = complexify(t["x"], t["y"])
            z = ad.reshape(z, (3, 4))
            z = ad.transpose(z, (1, 0))
            parts = [z[i] for i in range(4)]
            s = ad.stack(parts, axis=0)
            c = ad.concat([s, s], axis=1)
            return ad.sum_(ad.abs2(c))

        assert max_rel_error(build, leaves) < 1e-6

    def test_broadcasting_add_mul(self):
        rng = np.random.default_rng(4)
        leaves = {"a": rng.normal(size=(3, 1, 4)), "b": rng.normal(size=(5, 1))}

        def build(tape, t):
            return ad.sum_(ad.mul(ad.add(t["a"], t["b"]), t["a"]))

        assert max_rel_error(build, leaves) < 1e-6

    def test_matmul_batched(self):
        rng = np.random.default_rng(5)
        leaves = {"a": rng.normal(size=(2, 3, 4)), "b": rng.normal(size=(4, 5))}

        def build(tape, t):
            return ad.sum_(ad.abs2(ad.matmul(t["a"], t["b"])))

        assert max_rel_error(build, leaves) < 1e-6


class TestMatrixOps:
    def test_hermitian_solve_value_and_gradient(self):
        rng = np.random.default_rng(6)
        b = rand_pd(rng, 2, d=3)
        v = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))
        tape = ad.Tape()
        u = ad.hermitian_solve(tape.leaf(b), tape.leaf(v))
        np.testing.assert_allclose(
            np.einsum("bde,be->bd", b, u.value), v, atol=1e-10)

        leaves = {"x": rng.normal(size=(2, 3)), "y": rng.normal(size=(2, 3))}

        def build(tape, t):
            vv = complexify(t["x"], t["y"])
            return ad.sum_(ad.abs2(ad.hermitian_solve(b, vv)))

        assert max_rel_error(build, leaves) < 1e-6

    def test_hermitian_solve_matrix_gradient(self):
        rng = np.random.default_rng(9)
        d = 3
        v = rng.normal(size=d) + 1j * rng.normal(size=d)

        def build(tape, t):
            m = complexify(t["br"], t["bi"])
            b = ad.add(ad.mul(ad.matmul(m, ad.htranspose(m)), 1.0),
                       np.eye(d) * d)
            return ad.sum_(ad.abs2(ad.hermitian_solve(b, v)))

        leaves = {"br": rng.normal(size=(d, d)), "bi": rng.normal(size=(d, d))}
        assert max_rel_error(build, leaves) < 1e-5

    def test_hermitian_solve_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            ad.hermitian_solve(np.array([[1.0, 2.0], [0.0, 1.0]]),
                               np.ones(2, dtype=complex))

    def test_not_positive_definite_reports_indices(self):
        b = np.stack([np.eye(2, dtype=complex), -np.eye(2, dtype=complex)])
        with pytest.raises(ad.NotPositiveDefiniteError) as exc:
            ad.log_det_hermitian(b)
        assert (1,) in exc.value.indices

    def test_log_det_gradient(self):
        rng = np.random.default_rng(10)
        d = 3

        def build(tape, t):
            m = complexify(t["br"], t["bi"])
            b = ad.add(ad.matmul(m, ad.htranspose(m)), np.eye(d) * d)
            return ad.sum_(ad.log_det_hermitian(b))

        leaves = {"br": rng.normal(size=(d, d)), "bi": rng.normal(size=(d, d))}
        assert max_rel_error(build, leaves) < 1e-6

    def test_quadratic_form_positive_and_gradient(self):
        rng = np.random.default_rng(11)
        d = 3
        b = rand_pd(rng, d=d)
        x0 = rng.normal(size=d)
        y0 = rng.normal(size=d)
        tape = ad.Tape()
        q = ad.quadratic_form(tape.leaf(x0 + 1j * y0), tape.leaf(b))
        assert q.value > 0

        def build(tape, t):
            return ad.sum_(ad.quadratic_form(complexify(t["x"], t["y"]), b))

        assert max_rel_error(build, {"x": x0, "y": y0}) < 1e-6

    def test_l2_normalize_gradient_and_unit_norm(self):
        rng = np.random.default_rng(12)
        leaves = {"x": rng.normal(size=(2, 4)), "y": rng.normal(size=(2, 4))}

        def build(tape, t):
            z = ad.l2_normalize(complexify(t["x"], t["y"]), axis=-1)
            return ad.sum_(ad.abs2(ad.add(z, 0.5)))

        assert max_rel_error(build, leaves) < 1e-6
        tape = ad.Tape()
        z = ad.l2_normalize(tape.leaf(leaves["x"] + 1j * leaves["y"]))
        np.testing.assert_allclose(
            np.linalg.norm(z.value, axis=-1), 1.0, atol=1e-12)

    def test_trace_and_htranspose_values(self):
        rng = np.random.default_rng(13)
        m = rng.normal(size=(2, 3, 3)) + 1j * rng.normal(size=(2, 3, 3))
        tape = ad.Tape()
        node = tape.leaf(m)
        np.testing.assert_allclose(
            ad.trace(node).value, np.trace(m, axis1=-2, axis2=-1))
        np.testing.assert_allclose(
            ad.htranspose(node).value, np.conj(np.swapaxes(m, -1, -2)))

    def test_weighted_outer_sum_matches_loop(self):
        rng = np.random.default_rng(14)
        k, t, f, d = 2, 5, 3, 4
        w = rng.random(size=(k, t, f))
        y = rng.normal(size=(t, f, d, d)) + 1j * rng.normal(size=(t, f, d, d))
        got = ad.weighted_outer_sum(w, y).value
        want = np.zeros((k, f, d, d), complex)
        for ki in range(k):
            for ti in range(t):
                for fi in range(f):
                    want[ki, fi] += w[ki, ti, fi] * y[ti, fi]
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_weighted_outer_sum_gradient(self):
        rng = np.random.default_rng(15)
        k, t, f, d = 2, 4, 3, 2
        y = rng.normal(size=(t, f, d, d)) + 1j * rng.normal(size=(t, f, d, d))
        y = y + ad.hconj(y)

        def build(tape, tt):
            s = ad.weighted_outer_sum(tt["w"], y)
            return ad.sum_(ad.abs2(s))

        assert max_rel_error(build, {"w": rng.random(size=(k, t, f))}) < 1e-6


class TestCholeskyHelpers:
    def test_solve_matches_numpy(self):
        rng = np.random.default_rng(16)
        b = rand_pd(rng, 4, d=5)
        rhs = rng.normal(size=(4, 5, 2)) + 1j * rng.normal(size=(4, 5, 2))
        L = np.linalg.cholesky(b)
        x = ad.cholesky_solve_np(L, rhs)
        np.testing.assert_allclose(np.linalg.solve(b, rhs), x, atol=1e-10)

    def test_solve_broadcast_small_factor(self):
        rng = np.random.default_rng(17)
        b = rand_pd(rng, 2, 1, 3, d=4)
        rhs = rng.normal(size=(2, 9, 3, 4, 1)) + 1j * rng.normal(size=(2, 9, 3, 4, 1))
        L = np.linalg.cholesky(b)
        x = ad.cholesky_solve_np(L, rhs)
        want = np.linalg.solve(np.broadcast_to(b, (2, 9, 3, 4, 4)), rhs)
        np.testing.assert_allclose(x, want, atol=1e-10)

    def test_inverse(self):
        rng = np.random.default_rng(18)
        b = rand_pd(rng, d=4)
        inv = ad.cholesky_inverse_np(np.linalg.cholesky(b))
        np.testing.assert_allclose(inv @ b, np.eye(4), atol=1e-10)


class TestRandomGraphProperty:
    def test_twenty_random_graphs(self):
        rng = np.random.default_rng(2024)
        unary = [
            lambda z: ad.tanh(ad.real_part(z)),
            lambda z: ad.exp(ad.mul(ad.real_part(z), 0.3)),
            lambda z: ad.abs2(z),
            lambda z: ad.conj(z),
            lambda z: ad.mul(z, 0.7 + 0.2j),
            lambda z: ad.sigmoid(ad.imag_part(z)),
        ]
        binary = [ad.add, ad.sub, ad.mul,
                  lambda a, b: ad.add(a, ad.conj(b))]
        for trial in range(20):
            shape = (int(rng.integers(2, 4)), int(rng.integers(2, 5)))
            ops = [
                (unary[int(rng.integers(len(unary)))],
                 binary[int(rng.integers(len(binary)))])
                for _ in range(int(rng.integers(2, 5)))
            ]

            def build(tape, t, ops=ops):
                z = complexify(t["x"], t["y"])
                w = ad.mul(z, 0.5)
                for u, b in ops:
                    w = b(u(w), z)
                return ad.sum_(ad.abs2(w))

            leaves = {"x": rng.normal(size=shape), "y": rng.normal(size=shape)}
            err = max_rel_error(build, leaves, samples=4,
                                rng=np.random.default_rng(trial))
            assert err < 1e-5, f"trial {trial}: rel err {err}"
