"""Minimal selective state-space sequence machinery.

The continuous system h'(t) = A h(t) + B x(t), y(t) = C h(t) is discretized
per step by zero-order hold and evaluated as a linear-time recurrence:

    h_t = A_bar_t * h_{t-1} + B_bar_t * x_t        (per channel d, state n)
    y_t[d] = <C_t, h_t[d, :]>

with the selective, input-dependent per-step quantities

    B_t = W_b x_t, C_t = W_c x_t             (shape N)
    delta_t = softplus(W_delta x_t + b_delta) (shape D, strictly positive)
    A_bar = exp(delta * A), B_bar = ((A_bar - 1) / A) * B_t

A is diagonal and negative, so |A_bar| < 1 and the recurrence is stable. The
backward pass is the exact reverse-time adjoint of this recurrence, verified
against central finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, NumericError

A_ZERO_GUARD = 1e-8  # below this magnitude B_bar uses the A -> 0 limit

PARAMS_MAGIC = b"SSMP"
PARAMS_VERSION = 1
_PARAM_FIELDS = ("a", "w_b", "w_c", "w_delta", "b_delta")


def softplus(x):
    x = np.asarray(x, np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class SsmParams:
    """Parameters of one selective-scan block.

    ``a`` is the (D, N) negative diagonal; ``w_b``/``w_c`` are (N, D)
    input-dependent projections for B_t and C_t; ``w_delta`` (D, D) and
    ``b_delta`` (D,) produce the per-channel step size through softplus.
    """

    a: np.ndarray
    w_b: np.ndarray
    w_c: np.ndarray
    w_delta: np.ndarray
    b_delta: np.ndarray
    seed: int = 0
    dtype: type = np.float64

    def __post_init__(self):
        for name in _PARAM_FIELDS:
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), np.float64)
            )
        d, n = self.a.shape
        if self.w_b.shape != (n, d) or self.w_c.shape != (n, d):
            raise ContractError("w_b/w_c must have shape (N, D)")
        if self.w_delta.shape != (d, d) or self.b_delta.shape != (d,):
            raise ContractError("w_delta must be (D, D), b_delta (D,)")
        if not (self.a < 0).all():
            raise ContractError("all A entries must be negative")

    @property
    def channel_dim(self) -> int:
        return self.a.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a.shape[1]


def init_ssm_params(
    channel_dim: int,
    state_dim: int = 16,
    seed: int = 0,
    dtype: type = np.float64,
) -> SsmParams:
    """Seeded default parameters: A[d, n] = -(n + 1) per state, projections
    uniform in +-1/sqrt(D)."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(channel_dim)
    a = -np.tile(np.arange(1.0, state_dim + 1.0), (channel_dim, 1))
    return SsmParams(
        a=a,
        w_b=rng.uniform(-scale, scale, (state_dim, channel_dim)),
        w_c=rng.uniform(-scale, scale, (state_dim, channel_dim)),
        w_delta=rng.uniform(-scale, scale, (channel_dim, channel_dim)),
        b_delta=rng.uniform(-scale, scale, channel_dim),
        seed=seed,
        dtype=dtype,
    )


def discretize(a, b_t, delta_t):
    """Zero-order-hold discretization of diagonal dynamics.

    A_bar = exp(delta * a); B_bar = ((A_bar - 1) / a) * b, with the limit
    delta * b used where |a| < 1e-8. Inputs broadcast; delta must be > 0.
    """
    a = np.asarray(a, np.float64)
    b = np.asarray(b_t, np.float64)
    delta = np.asarray(delta_t, np.float64)
    if np.any(delta <= 0.0):
        raise ContractError("delta_t must be strictly positive")
    a_bar = np.exp(delta * a)
    small = np.abs(a) < A_ZERO_GUARD
    safe_a = np.where(small, 1.0, a)
    factor = np.where(small, delta * np.ones_like(a_bar), (a_bar - 1.0) / safe_a)
    b_bar = factor * b
    if np.ndim(a_bar) == 0 and np.ndim(b_bar) == 0:
        return float(a_bar), float(b_bar)
    return a_bar, b_bar


@dataclass
class ScanCache:
    """Everything the backward pass needs from one forward scan."""

    x: np.ndarray        # (L, D)
    b_t: np.ndarray      # (L, N)
    c_t: np.ndarray      # (L, N)
    dpre: np.ndarray     # (L, D)
    delta: np.ndarray    # (L, D)
    a_bar: np.ndarray    # (L, D, N)
    factor: np.ndarray   # (L, D, N), B_bar = factor * B_t
    h: np.ndarray        # (L, D, N)
    params: SsmParams

    def __len__(self) -> int:
        return self.x.shape[0]


_SCAN_CHUNK = 4096  # streaming-path block size; keeps working set cache-sized


def _per_step_quantities(x: np.ndarray, params: SsmParams, dt):
    """Vectorized selective quantities for a span of steps."""
    a = params.a.astype(dt)
    b_t = x @ params.w_b.T.astype(dt)
    c_t = x @ params.w_c.T.astype(dt)
    dpre = x @ params.w_delta.T.astype(dt) + params.b_delta.astype(dt)
    delta = softplus(dpre).astype(dt)
    a_bar = np.exp(delta[:, :, None] * a[None, :, :])
    small = np.abs(a) < A_ZERO_GUARD
    safe_a = np.where(small, 1.0, a)
    factor = np.where(
        small[None, :, :],
        delta[:, :, None] * np.ones((1, 1, params.state_dim), dt),
        (a_bar - 1.0) / safe_a[None, :, :],
    )
    return b_t, c_t, dpre, delta, a_bar, factor


def selective_scan_fwd(
    x: np.ndarray, params: SsmParams, keep_cache: bool = True
) -> tuple[np.ndarray, ScanCache | None]:
    """Run the discretized recurrence over a (L, D) input sequence.

    Returns (y, cache) with y of shape (L, D); h starts at zero. Cost and
    memory are linear in L; without a cache the per-step quantities are
    produced in fixed-size chunks so the working set stays bounded.
    """
    dt = params.dtype
    x = np.asarray(x, dt)
    if x.ndim != 2 or x.shape[1] != params.channel_dim:
        raise ContractError(
            f"x must be (L, {params.channel_dim}), got {x.shape}"
        )
    if x.size and not np.isfinite(x).all():
        raise NumericError("non-finite input sequence")
    L, D = x.shape
    N = params.state_dim
    y = np.empty((L, D), dt)
    h = np.zeros((D, N), dt)

    if keep_cache:
        b_t, c_t, dpre, delta, a_bar, factor = _per_step_quantities(x, params, dt)
        bx = factor * b_t[:, None, :] * x[:, :, None]  # B_bar * x_t, (L, D, N)
        hs = np.empty((L, D, N), dt)
        for t in range(L):
            h = a_bar[t] * h + bx[t]
            y[t] = h @ c_t[t]
            hs[t] = h
    else:
        for s in range(0, L, _SCAN_CHUNK):
            xb = x[s : s + _SCAN_CHUNK]
            b_t, c_t, _, _, a_bar, factor = _per_step_quantities(xb, params, dt)
            bx = factor * b_t[:, None, :] * xb[:, :, None]
            for t in range(xb.shape[0]):
                h = a_bar[t] * h + bx[t]
                y[s + t] = h @ c_t[t]

    if L and not np.isfinite(y).all():
        bad = int(np.flatnonzero(~np.isfinite(y).all(axis=1))[0])
        raise NumericError(f"non-finite scan output at step {bad}")
    if not keep_cache:
        return y, None
    cache = ScanCache(
        x=x, b_t=b_t, c_t=c_t, dpre=dpre, delta=delta,
        a_bar=a_bar, factor=factor, h=hs, params=params,
    )
    return y, cache


@dataclass
class SsmGrads:
    """Gradients mirroring SsmParams plus the input sequence."""

    x: np.ndarray
    a: np.ndarray
    w_b: np.ndarray
    w_c: np.ndarray
    w_delta: np.ndarray
    b_delta: np.ndarray


def selective_scan_bwd(cache: ScanCache, grad_y: np.ndarray) -> SsmGrads:
    """Reverse-time adjoint of the forward recurrence.

    Accumulates gradients with respect to the input sequence and every
    parameter (A, W_b, W_c, W_delta, b_delta).
    """
    if cache is None or cache.h is None:
        raise ContractError("backward pass needs a forward run with keep_cache=True")
    params = cache.params
    g = np.asarray(grad_y, np.float64)
    if g.shape != cache.x.shape:
        raise ContractError(
            f"grad_y shape {g.shape} does not match inputs {cache.x.shape}"
        )
    x = cache.x.astype(np.float64)
    L, D = x.shape
    N = params.state_dim
    a = params.a
    small = np.abs(a) < A_ZERO_GUARD
    safe_a = np.where(small, 1.0, a)

    gb_t = np.zeros((L, N))
    gc_t = np.zeros((L, N))
    gdelta = np.zeros((L, D))
    gx = np.zeros((L, D))
    ga = np.zeros((D, N))
    gh = np.zeros((D, N))

    for t in range(L - 1, -1, -1):
        a_bar = cache.a_bar[t]
        factor = cache.factor[t]
        b_bar = factor * cache.b_t[t][None, :]
        gh += g[t][:, None] * cache.c_t[t][None, :]
        gc_t[t] = g[t] @ cache.h[t]
        h_prev = cache.h[t - 1] if t > 0 else np.zeros((D, N))
        ga_bar = gh * h_prev
        gb_bar = gh * x[t][:, None]
        gx[t] += (gh * b_bar).sum(axis=1)
        # B_bar = factor * B_t
        gfactor = gb_bar * cache.b_t[t][None, :]
        gb_t[t] = (gb_bar * factor).sum(axis=0)
        # factor = (A_bar - 1)/A, or delta where |A| is below the guard
        gdelta[t] += np.where(small, gfactor, 0.0).sum(axis=1)
        ga_bar = ga_bar + np.where(small, 0.0, gfactor / safe_a)
        ga += np.where(small, 0.0, -gfactor * factor / safe_a)
        # A_bar = exp(delta * A)
        gdelta[t] += (ga_bar * a_bar * a).sum(axis=1)
        ga += ga_bar * a_bar * cache.delta[t][:, None]
        gh = gh * a_bar

    gdpre = gdelta * _sigmoid(cache.dpre.astype(np.float64))
    gx += gdpre @ params.w_delta + gb_t @ params.w_b + gc_t @ params.w_c
    return SsmGrads(
        x=gx,
        a=ga,
        w_b=gb_t.T @ x,
        w_c=gc_t.T @ x,
        w_delta=gdpre.T @ x,
        b_delta=gdpre.sum(axis=0),
    )


def _loss(params: SsmParams, x: np.ndarray) -> float:
    y, _ = selective_scan_fwd(x, params, keep_cache=False)
    return float(y.sum())


def grad_check(params: SsmParams, x: np.ndarray, eps: float = 1e-5) -> dict:
    """Compare the analytic gradient of sum(y) against central differences.

    Every scalar parameter is perturbed by +-eps. Per-scalar error is
    |analytic - numeric| / max(|analytic|, |numeric|, 1); the report names
    the worst offender.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ContractError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    x = np.asarray(x, np.float64)
    y, cache = selective_scan_fwd(x, params)
    grads = selective_scan_bwd(cache, np.ones_like(y))

    worst = {"worst_param": None, "analytic": 0.0, "numeric": 0.0, "rel_err": 0.0}
    arrays = {name: getattr(params, name).copy() for name in _PARAM_FIELDS}
    for name in _PARAM_FIELDS:
        arr = arrays[name]
        analytic = getattr(grads, name)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            f_plus = _loss(SsmParams(**arrays, seed=params.seed, dtype=np.float64), x)
            arr[idx] = orig - eps
            f_minus = _loss(SsmParams(**arrays, seed=params.seed, dtype=np.float64), x)
            arr[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            ana = float(analytic[idx])
            rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1.0)
            if rel >= worst["rel_err"]:
                worst = {
                    "worst_param": f"{name}{list(idx)}",
                    "analytic": ana,
                    "numeric": float(numeric),
                    "rel_err": float(rel),
                }
            it.iternext()
    worst["eps"] = float(eps)
    return worst


# ---------------------------------------------------------------------------
# Parameter snapshots: magic 'SSMP', version u32, seed i64, D u32, N u32,
# then the five arrays as little-endian f64 in declaration order.
# ---------------------------------------------------------------------------


def save_params(params: SsmParams, path) -> None:
    head = struct.pack(
        "<4sIqII", PARAMS_MAGIC, PARAMS_VERSION, params.seed,
        params.channel_dim, params.state_dim,
    )
    with open(path, "wb") as fh:
        fh.write(head)
        for name in _PARAM_FIELDS:
            fh.write(getattr(params, name).astype("<f8").tobytes())


def load_params(path) -> SsmParams:
    raw = Path(path).read_bytes()
    head = struct.Struct("<4sIqII")
    if len(raw) < head.size:
        raise FormatError(f"{path}: too short for a parameter snapshot")
    magic, version, seed, d, n = head.unpack_from(raw, 0)
    if magic != PARAMS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != PARAMS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    shapes = {
        "a": (d, n), "w_b": (n, d), "w_c": (n, d),
        "w_delta": (d, d), "b_delta": (d,),
    }
    expected = head.size + sum(int(np.prod(s)) * 8 for s in shapes.values())
    if len(raw) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes, got {len(raw)}"
        )
    off = head.size
    arrays = {}
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(
            raw, dtype="<f8", count=count, offset=off
        ).reshape(shape).copy()
        off += count * 8
    return SsmParams(seed=seed, dtype=np.float64, **arrays)
