import math

import numpy as np
import pytest

import rayserde.ssm as ssm_mod
from rayserde.errors import ContractError, FormatError, NumericError
from rayserde.ssm import (
    SsmParams,
    discretize,
    grad_check,
    init_ssm_params,
    load_params,
    save_params,
    selective_scan_bwd,
    selective_scan_fwd,
)


def naive_scan(x, params):
    """Step-by-step scalar recurrence, independent of the vectorized path."""
    L, D = x.shape
    N = params.state_dim
    b_t = x @ params.w_b.T
    c_t = x @ params.w_c.T
    dpre = x @ params.w_delta.T + params.b_delta
    delta = np.maximum(dpre, 0) + np.log1p(np.exp(-np.abs(dpre)))
    h = np.zeros((D, N))
    y = np.zeros((L, D))
    for t in range(L):
        for d in range(D):
            acc = 0.0
            for n in range(N):
                a = params.a[d, n]
                a_bar = math.exp(delta[t, d] * a)
                if abs(a) < 1e-8:
                    b_bar = delta[t, d] * b_t[t, n]
                else:
                    b_bar = (a_bar - 1.0) / a * b_t[t, n]
                h[d, n] = a_bar * h[d, n] + b_bar * x[t, d]
                acc += c_t[t, n] * h[d, n]
            y[t, d] = acc
    return y


class TestDiscretize:
    def test_integrator_limit_at_a_zero(self):
        a_bar, b_bar = discretize(0.0, 2.0, 0.1)
        assert a_bar == 1.0
        assert b_bar == pytest.approx(0.2)

    def test_vanishing_step(self):
        a_bar, b_bar = discretize(-3.0, 5.0, 1e-12)
        assert a_bar == pytest.approx(1.0, abs=1e-11)
        assert b_bar == pytest.approx(0.0, abs=1e-10)

    def test_half_life_step(self):
        # A = -1, delta = ln 2: A_bar = 1/2 and B_bar = B/2
        a_bar, b_bar = discretize(-1.0, 3.0, math.log(2.0))
        assert a_bar == pytest.approx(0.5, rel=1e-12)
        assert b_bar == pytest.approx(1.5, rel=1e-12)

    def test_nonpositive_delta_rejected(self):
        with pytest.raises(ContractError):
            discretize(-1.0, 1.0, 0.0)
        with pytest.raises(ContractError):
            discretize(-1.0, 1.0, -0.5)

    def test_array_broadcast(self):
        a = -np.arange(1.0, 4.0)
        a_bar, b_bar = discretize(a, 1.0, 0.5)
        np.testing.assert_allclose(a_bar, np.exp(-0.5 * np.arange(1.0, 4.0)))
        np.testing.assert_allclose(b_bar, (a_bar - 1.0) / a)


class TestForwardScan:
    def test_zero_input_gives_zero_output(self):
        params = init_ssm_params(4, 8, seed=0)
        y, _ = selective_scan_fwd(np.zeros((16, 4)), params)
        assert np.all(y == 0.0)

    def test_empty_sequence(self):
        params = init_ssm_params(3, 4, seed=0)
        y, cache = selective_scan_fwd(np.zeros((0, 3)), params)
        assert y.shape == (0, 3)
        assert len(cache) == 0

    def test_single_step_closed_form(self):
        params = init_ssm_params(3, 5, seed=2)
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 3))
        y, _ = selective_scan_fwd(x, params)
        b0 = params.w_b @ x[0]
        c0 = params.w_c @ x[0]
        dpre = params.w_delta @ x[0] + params.b_delta
        delta = np.log1p(np.exp(-np.abs(dpre))) + np.maximum(dpre, 0)
        for d in range(3):
            a_bar = np.exp(delta[d] * params.a[d])
            b_bar = (a_bar - 1.0) / params.a[d] * b0
            expected = float(c0 @ (b_bar * x[0, d]))
            assert y[0, d] == pytest.approx(expected, rel=1e-12)

    def test_matches_naive_recurrence(self):
        params = init_ssm_params(4, 16, seed=7)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((512, 4))
        y, _ = selective_scan_fwd(x, params)
        np.testing.assert_allclose(y, naive_scan(x, params), atol=1e-10)

    def test_wrong_channel_count(self):
        params = init_ssm_params(4, 8)
        with pytest.raises(ContractError):
            selective_scan_fwd(np.zeros((4, 3)), params)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_output_reports_step(self):
        params = init_ssm_params(2, 2, seed=0)
        huge = SsmParams(
            a=params.a,
            w_b=params.w_b * 1e308,
            w_c=params.w_c * 1e308,
            w_delta=params.w_delta,
            b_delta=params.b_delta,
        )
        with pytest.raises(NumericError, match="step 0"):
            selective_scan_fwd(np.ones((4, 2)), huge)

    def test_stability_bound(self):
        params = init_ssm_params(4, 8, seed=5)
        rng = np.random.default_rng(9)
        x = rng.uniform(-3, 3, (256, 4))
        y, cache = selective_scan_fwd(x, params)
        bx = cache.factor * cache.b_t[:, None, :] * cache.x[:, :, None]
        bound = np.abs(bx).max() / (1.0 - cache.a_bar.max())
        assert np.abs(cache.h).max() <= bound + 1e-9

    def test_causality(self):
        params = init_ssm_params(4, 8, seed=1)
        rng = np.random.default_rng(4)
        x = rng.standard_normal((64, 4))
        y, _ = selective_scan_fwd(x, params)
        x2 = x.copy()
        x2[40] += 10.0
        y2, _ = selective_scan_fwd(x2, params)
        np.testing.assert_array_equal(y[:40], y2[:40])
        assert not np.allclose(y[40:], y2[40:])

    def test_float32_flag(self):
        params = init_ssm_params(4, 8, seed=1, dtype=np.float32)
        y, _ = selective_scan_fwd(np.ones((8, 4)), params)
        assert y.dtype == np.float32

    def test_negative_a_enforced(self):
        with pytest.raises(ContractError):
            init_ssm_params(2, 2)  # fine
            SsmParams(
                a=np.array([[1.0, -1.0], [-1.0, -1.0]]),
                w_b=np.zeros((2, 2)),
                w_c=np.zeros((2, 2)),
                w_delta=np.zeros((2, 2)),
                b_delta=np.zeros(2),
            )


class TestBackward:
    def test_zero_upstream_gradient(self):
        params = init_ssm_params(3, 4, seed=0)
        x = np.random.default_rng(0).standard_normal((8, 3))
        y, cache = selective_scan_fwd(x, params)
        grads = selective_scan_bwd(cache, np.zeros_like(y))
        for name in ("x", "a", "w_b", "w_c", "w_delta", "b_delta"):
            assert np.all(getattr(grads, name) == 0.0)

    def test_shape_mismatch(self):
        params = init_ssm_params(3, 4, seed=0)
        y, cache = selective_scan_fwd(np.zeros((8, 3)), params)
        with pytest.raises(ContractError):
            selective_scan_bwd(cache, np.zeros((7, 3)))

    def test_requires_cache(self):
        with pytest.raises(ContractError):
            selective_scan_bwd(None, np.zeros((1, 1)))

    def test_single_step_gradient_matches_finite_differences(self):
        params = init_ssm_params(1, 1, seed=3)
        x = np.array([[0.7]])
        y, cache = selective_scan_fwd(x, params)
        grads = selective_scan_bwd(cache, np.ones_like(y))
        eps = 1e-6
        xp = x.copy(); xp[0, 0] += eps
        xm = x.copy(); xm[0, 0] -= eps
        fd = (
            selective_scan_fwd(xp, params)[0].sum()
            - selective_scan_fwd(xm, params)[0].sum()
        ) / (2 * eps)
        assert grads.x[0, 0] == pytest.approx(fd, rel=1e-5)

    def test_input_gradient_matches_finite_differences(self):
        params = init_ssm_params(4, 8, seed=6)
        rng = np.random.default_rng(8)
        x = rng.standard_normal((16, 4))
        y, cache = selective_scan_fwd(x, params)
        grads = selective_scan_bwd(cache, np.ones_like(y))
        eps = 1e-6
        for (t, d) in [(0, 0), (5, 2), (15, 3)]:
            xp = x.copy(); xp[t, d] += eps
            xm = x.copy(); xm[t, d] -= eps
            fd = (
                selective_scan_fwd(xp, params)[0].sum()
                - selective_scan_fwd(xm, params)[0].sum()
            ) / (2 * eps)
            assert grads.x[t, d] == pytest.approx(fd, rel=1e-6, abs=1e-9)


class TestGradCheck:
    def test_random_instance_passes(self):
        params = init_ssm_params(4, 8, seed=11)
        x = np.random.default_rng(11).standard_normal((64, 4))
        report = grad_check(params, x, eps=1e-5)
        assert report["rel_err"] <= 1e-4
        assert report["worst_param"]

    def test_clean_instance_is_tight(self):
        params = init_ssm_params(2, 3, seed=0)
        x = np.random.default_rng(1).standard_normal((8, 2))
        report = grad_check(params, x, eps=1e-5)
        assert report["rel_err"] <= 1e-8

    def test_corrupted_backward_is_flagged(self, monkeypatch):
        params = init_ssm_params(3, 4, seed=2)
        x = np.random.default_rng(2).standard_normal((12, 3))
        real_bwd = ssm_mod.selective_scan_bwd

        def zeroed(cache, grad_y):
            grads = real_bwd(cache, grad_y)
            grads.w_b = grads.w_b * 0.0
            return grads

        monkeypatch.setattr(ssm_mod, "selective_scan_bwd", zeroed)
        report = ssm_mod.grad_check(params, x, eps=1e-5)
        assert report["rel_err"] > 0.5
        assert report["worst_param"].startswith("w_b")

    def test_eps_domain(self):
        params = init_ssm_params(2, 2, seed=0)
        with pytest.raises(ContractError):
            grad_check(params, np.zeros((2, 2)), eps=1e-8)


class TestScanScaling:
    def test_runtime_is_roughly_linear(self):
        import time

        params = init_ssm_params(4, 16, seed=0)
        rng = np.random.default_rng(0)

        def run(L):
            x = rng.standard_normal((L, 4))
            times = []
            for _ in range(3):
                t0 = time.perf_counter()
                selective_scan_fwd(x, params, keep_cache=False)
                times.append(time.perf_counter() - t0)
            return np.median(times)

        run(1024)  # warm-up
        t1, t2 = run(2048), run(4096)
        assert t2 / t1 <= 3.0  # loose smoke bound; acceptance pins 2.5 at 8k+


class TestSnapshots:
    def test_round_trip(self, tmp_path):
        params = init_ssm_params(5, 7, seed=42)
        path = tmp_path / "params.bin"
        save_params(params, path)
        back = load_params(path)
        assert back.seed == 42
        for name in ("a", "w_b", "w_c", "w_delta", "b_delta"):
            np.testing.assert_array_equal(getattr(back, name), getattr(params, name))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 60)
        with pytest.raises(FormatError):
            load_params(path)

    def test_truncated(self, tmp_path):
        params = init_ssm_params(3, 3, seed=0)
        path = tmp_path / "p.bin"
        save_params(params, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError):
            load_params(path)
