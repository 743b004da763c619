import json

import numpy as np
import pytest

from nadlab import models
from nadlab.models import (
    AliasingOperator,
    LinearPooling,
    LogisticRegression,
    MiniCNN,
    MLP,
    NonlinearPooling,
    ParamSet,
    ShapeError,
    SingleHiddenReLU,
    apply_aliasing,
    finite_diff_grad_input,
    forward,
    forward_linear_pooling,
    forward_nonlinear_pooling,
    grad_input,
    grad_params,
    init_params,
    strip_pooling,
)
from nadlab.rng import Rng


def alias_matrix(s, d):
    m = d // s
    return np.kron(np.ones(s), np.eye(m)) / np.sqrt(s)


class TestAliasing:
    def test_direct_sum_example(self):
        op = AliasingOperator(s=2, d=4)
        out = op.apply(np.array([1.0, 2.0, 3.0, 4.0]))
        assert np.allclose(out, np.array([4.0, 6.0]) / np.sqrt(2))

    def test_canonical_vector_folds_mod_m(self):
        op = AliasingOperator(s=4, d=16)
        for ell in (0, 5, 11, 15):
            e = np.zeros(16)
            e[ell] = 1.0
            out = op.apply(e)
            want = np.zeros(4)
            want[ell % 4] = 1.0 / 2.0
            assert np.allclose(out, want)

    def test_adjoint_identity(self):
        op = AliasingOperator(s=4, d=32)
        rng = Rng(0)
        x, u = rng.gaussian(32), rng.gaussian(8)
        assert abs(np.dot(op.apply(x), u) - np.dot(x, op.adjoint(u))) < 1e-12

    def test_rows_orthonormal(self):
        a = alias_matrix(4, 32)
        assert np.allclose(a @ a.T, np.eye(8), atol=1e-12)
        op = AliasingOperator(s=4, d=32)
        for i in range(8):
            e = np.zeros(8)
            e[i] = 1
            assert np.allclose(op.apply(op.adjoint(e)), e, atol=1e-12)

    def test_indivisible_rejected(self):
        with pytest.raises(ShapeError):
            AliasingOperator(s=3, d=16)

    def test_module_level_entry(self):
        # rows fold independently: stacking e_i rows yields A^T
        op = AliasingOperator(s=2, d=4)
        assert np.allclose(apply_aliasing(op, np.eye(4)), alias_matrix(2, 4).T)


class TestForwardExamples:
    def test_logistic_picks_first_coordinate(self):
        spec = LogisticRegression(d=5)
        e1 = np.eye(5)[0]
        params = ParamSet({"theta": e1.copy()}, spec.layout())
        assert forward(spec, params, e1) == 1.0

    def test_linear_pooling_optimal_filter_hits_one(self):
        d, s = 12, 3
        m = Rng(1).uniform(0.5, 2.0, d)
        ell = 7
        phi = np.zeros(d)
        phi[ell] = 1.0 / m[ell]
        theta = np.zeros(d // s)
        theta[ell % (d // s)] = np.sqrt(s)
        x = np.zeros(d)
        x[ell] = 1.0
        assert abs(forward_linear_pooling(m, s, phi, theta, x) - 1.0) < 1e-12

    def test_zero_params_give_zero(self):
        for spec in (
            LogisticRegression(d=4),
            SingleHiddenReLU(d=4, width=3),
            MLP(d=4, widths=(5,)),
            MiniCNN(height=4, width=4, channels=(2,), pooling="avg", s=2),
        ):
            params = init_params(spec, Rng(0)).map(lambda a: a * 0.0)
            assert forward(spec, params, np.ones(spec.input_shape)) == 0.0

    def test_shape_error_names_layer(self):
        spec = MiniCNN(height=8, width=8, channels=(2, 2), pooling="avg", s=2)
        params = init_params(spec, Rng(0))
        with pytest.raises(ShapeError, match="conv0"):
            forward(spec, params, np.ones((1, 4, 4)))

    def test_x_orthogonal_to_filter_support(self):
        d, s = 8, 2
        m = np.ones(d)
        phi = np.zeros(d)
        phi[0] = 1.0
        x = np.zeros(d)
        x[3] = 5.0
        assert forward_linear_pooling(m, s, phi, Rng(0).gaussian(4), x) == 0.0

    def test_scaling_theta_scales_output(self):
        d, s = 8, 2
        rng = Rng(2)
        m, phi, theta, x = (
            rng.uniform(0.5, 1.5, d),
            rng.gaussian(d),
            rng.gaussian(4),
            rng.gaussian(d),
        )
        base = forward_linear_pooling(m, s, phi, theta, x)
        assert abs(forward_linear_pooling(m, s, phi, 3.0 * theta, x) - 3 * base) < 1e-12
        # multilinear in phi as well
        assert abs(forward_linear_pooling(m, s, 3.0 * phi, theta, x) - 3 * base) < 1e-12


class TestGradients:
    def test_logistic_grad_input_is_theta(self):
        spec = LogisticRegression(d=6)
        params = init_params(spec, Rng(3))
        x = Rng(4).gaussian(6)
        assert np.array_equal(grad_input(spec, params, x), params["theta"])
        assert np.array_equal(grad_params(spec, params, x), x)

    def test_linear_pooling_grad_input_formula_and_x_independence(self):
        d, s = 12, 4
        rng = Rng(5)
        m = rng.uniform(0.5, 2.0, d)
        spec = LinearPooling(m=m, s=s)
        params = init_params(spec, rng)
        a = alias_matrix(s, d)
        want = (a.T @ params["theta"]) * params["phi"] * m
        for seed in (1, 2):
            x = Rng(seed).gaussian(d)
            assert np.allclose(grad_input(spec, params, x), want, atol=1e-12)

    def test_nonlinear_pooling_grad_formula(self):
        d, s = 12, 4
        rng = Rng(6)
        m = rng.uniform(0.5, 2.0, d)
        spec = NonlinearPooling(m=m, s=s)
        params = init_params(spec, rng)
        x = rng.gaussian(d)
        a = alias_matrix(s, d)
        act = (params["phi"] * x > 0).astype(float)
        want = (a.T @ params["theta"]) * act * params["phi"] * m
        assert np.allclose(grad_input(spec, params, x), want, atol=1e-12)

    def test_nonlinear_pooling_relu_branches(self):
        d, s = 8, 2
        m = np.ones(d)
        rng = Rng(7)
        phi = np.abs(rng.gaussian(d)) + 0.1
        theta = rng.gaussian(4)
        x_neg = -np.abs(rng.gaussian(d)) - 0.1
        assert forward_nonlinear_pooling(m, s, phi, theta, x_neg) == 0.0
        x_pos = np.abs(rng.gaussian(d)) + 0.1
        lin = forward_linear_pooling(m, s, phi, theta, x_pos)
        assert abs(forward_nonlinear_pooling(m, s, phi, theta, x_pos) - lin) < 1e-12

    def test_single_hidden_grad_params_last_block_is_activations(self):
        spec = SingleHiddenReLU(d=5, width=4)
        rng = Rng(8)
        params = init_params(spec, rng)
        x = np.abs(rng.gaussian(5)) + 0.5
        pre = params["Phi"].T @ x
        if not np.all(pre > 0):
            params = ParamSet(
                {"Phi": np.abs(params["Phi"]), "theta": params["theta"]}, spec.layout()
            )
            pre = params["Phi"].T @ x
        flat = grad_params(spec, params, x)
        theta_block = flat[-4:]
        assert np.allclose(theta_block, np.maximum(pre, 0.0), atol=1e-12)

    @pytest.mark.parametrize(
        "spec_builder",
        [
            lambda: LogisticRegression(d=10),
            lambda: SingleHiddenReLU(d=10, width=6),
            lambda: MLP(d=10, widths=(7, 5)),
            lambda: LinearPooling(m=Rng(0).uniform(0.5, 2, 12), s=3),
            lambda: NonlinearPooling(m=Rng(0).uniform(0.5, 2, 12), s=3),
            lambda: MiniCNN(height=8, width=8, channels=(3, 4), pooling="avg", s=2),
            lambda: MiniCNN(height=8, width=8, channels=(3,), pooling="max", s=2),
            lambda: MiniCNN(height=8, width=8, channels=(3,), pooling="subsample", s=2),
            lambda: MiniCNN(height=8, width=8, channels=(2,), pooling="none"),
        ],
        ids=[
            "logistic",
            "single-hidden",
            "mlp",
            "linear-pooling",
            "nonlinear-pooling",
            "cnn-avg",
            "cnn-max",
            "cnn-subsample",
            "cnn-none",
        ],
    )
    def test_grads_match_finite_differences(self, spec_builder):
        spec = spec_builder()
        for draw in range(5):
            rng = Rng(100 + draw)
            params = init_params(spec, rng)
            x = rng.gaussian(spec.input_shape)
            gx = grad_input(spec, params, x)
            fd = _fd_input(spec, params, x, 1e-5)
            scale = np.abs(fd).max() + 1e-12
            assert np.abs(gx - fd).max() / scale < 1e-6
            gp = grad_params(spec, params, x)
            fdp = _fd_params(spec, params, x, 1e-5)
            scale = np.abs(fdp).max() + 1e-12
            assert np.abs(gp - fdp).max() / scale < 1e-6

    def test_fd_grad_exact_for_multilinear_any_h(self):
        d, s = 12, 4
        m = Rng(9).uniform(0.5, 2.0, d)
        spec = LinearPooling(m=m, s=s)
        params = init_params(spec, Rng(10))
        x = Rng(11).gaussian(d)
        exact = grad_input(spec, params, x)
        for h in (100.0, 1e-4):
            assert np.abs(finite_diff_grad_input(spec, params, x, h) - exact).max() < 1e-9

    def test_fd_grad_coarse_vs_fine_differ_near_kink(self):
        # scalar ReLU model: f(x) = relu(x + 0.5); kink inside the h=100 probe
        spec = SingleHiddenReLU(d=1, width=1)
        params = ParamSet(
            {"Phi": np.array([[1.0]]), "theta": np.array([1.0])}, spec.layout()
        )
        x = np.array([0.5])
        fine = finite_diff_grad_input(spec, params, x, 1e-4)
        coarse = finite_diff_grad_input(spec, params, x, 100.0)
        assert abs(fine[0] - 1.0) < 1e-9
        assert abs(coarse[0] - fine[0]) > 0.4

    def test_fd_rejects_nonpositive_h(self):
        spec = LogisticRegression(d=3)
        with pytest.raises(ValueError):
            finite_diff_grad_input(spec, init_params(spec, Rng(0)), np.zeros(3), 0.0)


def _fd_input(spec, params, x, h):
    out = np.zeros_like(x)
    flat = x.ravel()
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        out.ravel()[i] = (
            forward(spec, params, xp.reshape(x.shape))
            - forward(spec, params, xm.reshape(x.shape))
        ) / (2 * h)
    return out


def _fd_params(spec, params, x, h):
    flat = params.flat()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        vp, vm = flat.copy(), flat.copy()
        vp[i] += h
        vm[i] -= h
        out[i] = (
            forward(spec, ParamSet.from_flat(spec.layout(), vp), x)
            - forward(spec, ParamSet.from_flat(spec.layout(), vm), x)
        ) / (2 * h)
    return out


class TestInitParams:
    def test_zero_std_block_is_zero(self):
        spec = LinearPooling(m=np.ones(8), s=2, sigma_theta=0.0)
        params = init_params(spec, Rng(0))
        assert not params["theta"].any()
        assert params["phi"].any()

    def test_same_stream_identical(self):
        spec = MLP(d=6, widths=(4,))
        a, b = init_params(spec, Rng(1)), init_params(spec, Rng(1))
        assert np.array_equal(a.flat(), b.flat())

    def test_declared_variance_within_two_percent(self):
        spec = LinearPooling(m=np.ones(100_000), s=2, sigma_phi=1.7)
        params = init_params(spec, Rng(2))
        assert abs(params["phi"].var() - 1.7**2) / 1.7**2 < 0.02


class TestMiniCNN:
    def test_constant_input_invariant_to_shift_by_s(self):
        spec = MiniCNN(height=8, width=8, channels=(3, 4), pooling="avg", s=2)
        params = init_params(spec, Rng(4))
        x = np.full(spec.input_shape, 0.7)
        shifted = np.roll(x, spec.s, axis=-1)
        assert forward(spec, params, x) == forward(spec, params, shifted)

    def test_strip_pooling_increases_capacity(self):
        spec = MiniCNN(height=8, width=8, channels=(3, 4), pooling="avg", s=2)
        stripped = strip_pooling(spec)
        assert stripped.pooling == "none"
        n0 = sum(int(np.prod(b.shape)) for b in spec.layout())
        n1 = sum(int(np.prod(b.shape)) for b in stripped.layout())
        assert n1 > n0

    def test_strip_pooling_keeps_feature_extent(self):
        spec = MiniCNN(height=8, width=8, channels=(3,), pooling="avg", s=2)
        stripped = strip_pooling(spec)
        assert stripped._feature_extent() == (8, 8)

    def test_strip_pooling_idempotent(self):
        spec = MiniCNN(height=8, width=8, channels=(3,), pooling="avg", s=2)
        once = strip_pooling(spec)
        assert strip_pooling(once) == once

    def test_strip_pooling_rejects_non_cnn(self):
        with pytest.raises(TypeError):
            strip_pooling(LogisticRegression(d=4))

    def test_pool_divisibility_checked(self):
        with pytest.raises(ShapeError):
            MiniCNN(height=6, width=6, channels=(2, 2), pooling="avg", s=2)

    def test_batched_forward_equals_loop(self):
        spec = MiniCNN(height=8, width=8, channels=(2, 3), pooling="max", s=2)
        params = init_params(spec, Rng(5))
        xb = Rng(6).gaussian((7,) + spec.input_shape)
        batched = forward(spec, params, xb)
        single = np.array([forward(spec, params, xb[i]) for i in range(7)])
        assert np.array_equal(batched, single)


class TestSerialization:
    def test_spec_json_roundtrip(self):
        for spec in (
            LogisticRegression(d=4, sigma_theta=2.0),
            MiniCNN(height=8, width=8, channels=(3, 4), pooling="max", s=2, fc_hidden=16),
            LinearPooling(m=np.arange(1.0, 9.0), s=2),
            MLP(d=6, widths=(4, 3), n_classes=10),
        ):
            doc = json.loads(spec.to_json())
            back = models.spec_from_dict(doc)
            assert back.to_json() == spec.to_json()

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError, match="unknown model variant"):
            models.spec_from_dict({"variant": "transformer", "version": 1})

    def test_params_roundtrip_and_layout_hash(self, tmp_path):
        spec = MLP(d=6, widths=(4,))
        params = init_params(spec, Rng(7))
        path = tmp_path / "p.npz"
        params.save(path)
        back = models.load_params(path, spec)
        assert np.array_equal(back.flat(), params.flat())
        other = MLP(d=6, widths=(5,))
        with pytest.raises(ShapeError, match="layout hash"):
            models.load_params(path, other)

    def test_flat_order_is_layer_then_weight_bias(self):
        spec = MLP(d=3, widths=(2,))
        names = [b.name for b in spec.layout()]
        assert names == ["fc0.weight", "fc0.bias", "head.weight", "head.bias"]
