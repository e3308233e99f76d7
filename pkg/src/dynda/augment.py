"""Time-series augmentations and the spline/resampling primitives behind them.

Every stochastic transform draws from an explicit :class:`RngStream`, so a
seed plus a call sequence fully determines the output. Arrays are
``[channels, length]``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

METHODS = ("identity", "jitter", "magnitude_warp", "time_warp", "window_warp")

# Invocation counter per transform; lets callers prove a code path never augments.
CALL_COUNTS: Counter = Counter()

# Smallest allowed time-warp speed, keeps the cumulative time strictly increasing.
MIN_WARP_SPEED = 0.1


class RngStream:
    """Seeded pseudo-random stream.

    ``child(*keys)`` derives an independent substream from the seed and the
    keys alone, so per-sample streams do not depend on call order.
    """

    def __init__(self, seed: int, _keys: tuple = ()):
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in _keys)
        ss = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=self.keys)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.keys + tuple(keys))

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, options):
        return options[int(self.generator.integers(0, len(options)))]

    def permutation(self, n):
        return self.generator.permutation(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, keys={self.keys})"


def as_rng(rng) -> RngStream:
    return rng if isinstance(rng, RngStream) else RngStream(rng)


@dataclass(frozen=True)
class AugmentConfig:
    jitter_sigma: float = 0.03
    mw_knots: int = 4
    mw_mu: float = 1.0
    mw_sigma: float = 0.2
    tw_knots: int = 4
    tw_sigma: float = 0.2
    ww_ratio: float = 0.10
    ww_scales: tuple[float, ...] = (0.5, 2.0)

    def __post_init__(self):
        object.__setattr__(self, "ww_scales", tuple(float(s) for s in self.ww_scales))
        if min(self.jitter_sigma, self.mw_sigma, self.tw_sigma) < 0:
            raise ValueError("augmentation sigmas must be >= 0")
        if self.mw_knots < 2 or self.tw_knots < 2:
            raise ValueError("knot counts must be >= 2")
        if not 0 < self.ww_ratio < 1:
            raise ValueError("ww_ratio must lie in (0, 1)")
        if not self.ww_scales or min(self.ww_scales) <= 0:
            raise ValueError("ww_scales must be nonempty and positive")


@dataclass(frozen=True, eq=False)
class AugmentedBundle:
    """The N views of one input, identity first, in :data:`METHODS` order."""

    views: tuple[np.ndarray, ...]
    source_label: int = -1
    methods: tuple[str, ...] = field(default=METHODS)

    def stack(self) -> np.ndarray:
        """``[N, C, T]`` array of all views."""
        return np.stack(self.views)

    def __len__(self):
        return len(self.views)


# ---------------------------------------------------------------------------
# primitives


def _check_knots(knot_x, knot_y):
    knot_x = np.asarray(knot_x, dtype=np.float64)
    knot_y = np.asarray(knot_y, dtype=np.float64)
    if knot_x.ndim != 1 or knot_x.size < 2:
        raise ValueError("need at least two knots")
    if knot_y.shape != knot_x.shape:
        raise ValueError(f"knot_x and knot_y lengths differ: {knot_x.size} vs {knot_y.size}")
    if np.any(np.diff(knot_x) <= 0):
        raise ValueError("knot_x must be strictly increasing")
    return knot_x, knot_y


def natural_spline_moments(knot_x, knot_y) -> np.ndarray:
    """Second derivatives at the knots of the natural cubic interpolant."""
    knot_x, knot_y = _check_knots(knot_x, knot_y)
    n = knot_x.size
    moments = np.zeros(n)
    if n == 2:
        return moments
    h = np.diff(knot_x)
    slope = np.diff(knot_y) / h
    rhs = 6.0 * np.diff(slope)
    ab = np.zeros((3, n - 2))
    ab[0, 1:] = h[1:-1]
    ab[1] = 2.0 * (h[:-1] + h[1:])
    ab[2, :-1] = h[1:-1]
    moments[1:-1] = solve_banded((1, 1), ab, rhs)
    return moments


def cubic_spline_eval(knot_x, knot_y, query_x) -> np.ndarray:
    """Evaluate the natural cubic spline through the knots at ``query_x``."""
    knot_x, knot_y = _check_knots(knot_x, knot_y)
    q = np.asarray(query_x, dtype=np.float64)
    if q.size and (q.min() < knot_x[0] or q.max() > knot_x[-1]):
        raise ValueError(
            f"query points must lie in [{knot_x[0]}, {knot_x[-1]}], "
            f"got [{q.min()}, {q.max()}]"
        )
    m = natural_spline_moments(knot_x, knot_y)
    k = np.clip(np.searchsorted(knot_x, q, side="right") - 1, 0, knot_x.size - 2)
    x0, x1 = knot_x[k], knot_x[k + 1]
    h = x1 - x0
    a = (x1 - q) / h
    b = (q - x0) / h
    y0, y1 = knot_y[k], knot_y[k + 1]
    # anchor on the nearer knot: exact at knots, and exact for flat segments
    linear = np.where(b <= 0.5, y0 + b * (y1 - y0), y1 - a * (y1 - y0))
    return linear + ((a**3 - a) * m[k] + (b**3 - b) * m[k + 1]) * h * h / 6.0


def smooth_curve_knots(length: int, n_knots: int) -> np.ndarray:
    """Knot positions: ``n_knots`` interior knots plus both endpoints, evenly spaced."""
    return np.linspace(0.0, length - 1, n_knots + 2)


def random_smooth_curve(length: int, n_knots: int, mu: float, sigma: float, rng) -> np.ndarray:
    """Spline through random-magnitude knots, evaluated at ``0..length-1``.

    Interior knot values are drawn from N(mu, sigma^2); the two endpoint
    knots are pinned to ``mu``.
    """
    if n_knots < 2 or length < 2:
        raise ValueError("need n_knots >= 2 and length >= 2")
    rng = as_rng(rng)
    knot_y = np.full(n_knots + 2, float(mu))
    knot_y[1:-1] = rng.normal(mu, sigma, n_knots)
    return cubic_spline_eval(smooth_curve_knots(length, n_knots), knot_y, np.arange(length, dtype=np.float64))


def resample_linear(v, new_len: int) -> np.ndarray:
    """Linearly resample ``v`` (1-D, or ``[..., L]``) to ``new_len`` points."""
    v = np.asarray(v, dtype=np.float64)
    L = v.shape[-1]
    if L < 2 or new_len < 2:
        raise ValueError("resampling needs at least two input and output points")
    if new_len == L:
        return v.copy()
    pos = np.arange(new_len) * (L - 1) / (new_len - 1)
    grid = np.arange(L, dtype=np.float64)
    if v.ndim == 1:
        out = np.interp(pos, grid, v)
    else:
        flat = v.reshape(-1, L)
        out = np.stack([np.interp(pos, grid, row) for row in flat]).reshape(v.shape[:-1] + (new_len,))
    out[..., 0] = v[..., 0]
    out[..., -1] = v[..., -1]
    return out


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


# ---------------------------------------------------------------------------
# transforms


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError(f"expected a [C, T] matrix with T >= 2, got shape {x.shape}")
    return x


def identity(x) -> np.ndarray:
    return _as_matrix(x).copy()


def jitter(x, sigma: float, rng) -> np.ndarray:
    CALL_COUNTS["jitter"] += 1
    x = _as_matrix(x)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    noise = as_rng(rng).normal(0.0, sigma, x.shape)
    if sigma == 0:
        return x.copy()
    return x + noise


def magnitude_warp(x, cfg: AugmentConfig, rng) -> np.ndarray:
    CALL_COUNTS["magnitude_warp"] += 1
    x = _as_matrix(x)
    curve = random_smooth_curve(x.shape[1], cfg.mw_knots, cfg.mw_mu, cfg.mw_sigma, rng)
    return x * curve[None, :]


def warp_times(speed: np.ndarray) -> np.ndarray:
    """Cumulative warped time from a speed curve, pinned to ``[0, T-1]``."""
    speed = np.maximum(np.asarray(speed, dtype=np.float64), MIN_WARP_SPEED)
    tau = np.cumsum(speed)
    T = tau.size
    tau = (tau - tau[0]) * ((T - 1) / (tau[-1] - tau[0]))
    tau[0], tau[-1] = 0.0, T - 1.0
    return tau


def apply_time_warp(x, tau: np.ndarray) -> np.ndarray:
    """Read ``x`` at the positions where the warped time crosses each integer."""
    x = _as_matrix(x)
    grid = np.arange(x.shape[1], dtype=np.float64)
    source = np.interp(grid, tau, grid)
    return np.stack([np.interp(source, grid, row) for row in x])


def time_warp(x, cfg: AugmentConfig, rng) -> np.ndarray:
    CALL_COUNTS["time_warp"] += 1
    x = _as_matrix(x)
    speed = random_smooth_curve(x.shape[1], cfg.tw_knots, 1.0, cfg.tw_sigma, rng)
    return apply_time_warp(x, warp_times(speed))


def window_length(length: int, ratio: float) -> int:
    w = max(2, _round_half_up(ratio * length))
    if w > length:
        raise ValueError(f"window of {w} samples does not fit a series of length {length}")
    return w


def apply_window_warp(x, start: int, width: int, scale: float) -> np.ndarray:
    """Stretch ``x[:, start:start+width]`` by ``scale`` and resample back to T."""
    x = _as_matrix(x)
    T = x.shape[1]
    if not (0 <= start and start + width <= T and width >= 2):
        raise ValueError(f"window [{start}, {start + width}) invalid for length {T}")
    warped = resample_linear(x[:, start:start + width], max(2, _round_half_up(scale * width)))
    joined = np.concatenate([x[:, :start], warped, x[:, start + width:]], axis=1)
    return resample_linear(joined, T)


def window_warp(x, cfg: AugmentConfig, rng) -> np.ndarray:
    CALL_COUNTS["window_warp"] += 1
    x = _as_matrix(x)
    rng = as_rng(rng)
    T = x.shape[1]
    w = window_length(T, cfg.ww_ratio)
    start = int(rng.integers(0, T - w + 1))
    scale = rng.choice(cfg.ww_scales)
    return apply_window_warp(x, start, w, scale)


def apply_all(x, cfg: AugmentConfig, rng) -> AugmentedBundle:
    """All five views of ``x`` (a TimeSeries or a ``[C, T]`` matrix)."""
    label = getattr(x, "label", -1)
    values = getattr(x, "values", x)
    rng = as_rng(rng)
    m = _as_matrix(values)
    views = (
        m.copy(),
        jitter(m, cfg.jitter_sigma, rng),
        magnitude_warp(m, cfg, rng),
        time_warp(m, cfg, rng),
        window_warp(m, cfg, rng),
    )
    return AugmentedBundle(views, source_label=label)


TRANSFORMS = {
    "identity": lambda x, cfg, rng: identity(x),
    "jitter": lambda x, cfg, rng: jitter(x, cfg.jitter_sigma, rng),
    "magnitude_warp": magnitude_warp,
    "time_warp": time_warp,
    "window_warp": window_warp,
}


def augment_batch(X: np.ndarray, cfg: AugmentConfig, rng: RngStream) -> np.ndarray:
    """``[B, C, T]`` -> ``[N, B, C, T]``; sample ``b`` uses substream ``rng.child(b)``."""
    views = [apply_all(X[b], cfg, rng.child(b)).views for b in range(X.shape[0])]
    return np.stack([np.stack([v[n] for v in views]) for n in range(len(METHODS))])


def identity_batch(X: np.ndarray, n_views: int = len(METHODS)) -> np.ndarray:
    """Identity replicated into every slot, for deterministic inference."""
    return np.broadcast_to(X, (n_views,) + X.shape).copy()
