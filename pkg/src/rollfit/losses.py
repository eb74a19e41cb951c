"""Trajectory losses and their exact gradients.

Provides single- and multi-step mean squared error, classical dynamic time
warping (value + optimal alignment path), the smoothed differentiable DTW
relaxation, a smoothed temporal-distortion penalty driven by the Gibbs
distribution over alignment paths, and the convex "dilate" combination of
the last two. All dynamic programs run in O(k^2) via anti-diagonal
vectorization; gradients are computed by exact reverse-mode passes over the
same recursions rather than by autodiff.

Conventions: trajectories are (k, d) arrays (time-major). Pairwise cell
costs are squared Euclidean distances over all d dimensions. The temporal
penalty matrix is ``(i - j)^2 / k^2`` so its scale is horizon-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import ValidationError, as_float_array, check_same_shape

# Below this smoothing value the Gibbs weights underflow and gradients are
# numerically meaningless; values are still computable (hard-min regime).
GAMMA_GRAD_MIN = 1e-4

LOSS_KINDS = ("mse", "dilate")


@dataclass(frozen=True)
class LossConfig:
    """Trajectory-loss selection: plain multi-step MSE or dilate.

    ``alpha`` balances the shape term against the temporal term; ``gamma``
    is the smoothing temperature shared by both smoothed terms.
    """

    kind: str = "mse"
    alpha: float = 0.5
    gamma: float = 1e-2

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValidationError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.gamma > 0:
            raise ValidationError(f"gamma must be positive, got {self.gamma}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(**d)


def _as_trajectory(x, name: str) -> np.ndarray:
    arr = as_float_array(x, name)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValidationError(f"{name} must be a (k, d) trajectory, got shape {arr.shape}")
    return arr


def mse_single(y_pred, y_true) -> float:
    """Mean squared error of one predicted state vector."""
    y_pred = as_float_array(y_pred, "y_pred", ndim=1)
    y_true = as_float_array(y_true, "y_true", ndim=1)
    check_same_shape(y_pred, y_true, "y_pred", "y_true")
    diff = y_pred - y_true
    return float(np.mean(diff * diff))


def mse_multi(y_pred, y_true) -> float:
    """Mean squared error over a (k, d) trajectory pair."""
    y_pred = _as_trajectory(y_pred, "y_pred")
    y_true = _as_trajectory(y_true, "y_true")
    check_same_shape(y_pred, y_true, "y_pred", "y_true")
    diff = y_pred - y_true
    return float(np.mean(diff * diff))


def mse_multi_grad(y_pred, y_true) -> np.ndarray:
    """Gradient of :func:`mse_multi` with respect to the prediction."""
    y_pred = _as_trajectory(y_pred, "y_pred")
    y_true = _as_trajectory(y_true, "y_true")
    check_same_shape(y_pred, y_true, "y_pred", "y_true")
    return 2.0 * (y_pred - y_true) / y_pred.size


def cost_matrix(y_pred, y_true) -> np.ndarray:
    """Pairwise squared-Euclidean cost matrix between two (k, d) trajectories."""
    y_pred = _as_trajectory(y_pred, "y_pred")
    y_true = _as_trajectory(y_true, "y_true")
    check_same_shape(y_pred, y_true, "y_pred", "y_true")
    sq_p = np.sum(y_pred * y_pred, axis=1)
    sq_t = np.sum(y_true * y_true, axis=1)
    delta = sq_p[:, None] + sq_t[None, :] - 2.0 * (y_pred @ y_true.T)
    # gemm rounding can leave tiny negatives on the diagonal of identical rows
    np.maximum(delta, 0.0, out=delta)
    return delta


def omega_matrix(k: int) -> np.ndarray:
    """Temporal penalty matrix ``(i - j)^2 / k^2``: zero diagonal, symmetric."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    idx = np.arange(k, dtype=np.float64)
    return (idx[:, None] - idx[None, :]) ** 2 / float(k * k)


def _check_square(delta) -> np.ndarray:
    delta = as_float_array(delta, "delta", ndim=2)
    if delta.shape[0] != delta.shape[1]:
        raise ValidationError(f"cost matrix must be square, got shape {delta.shape}")
    if not np.all(np.isfinite(delta)):
        raise ValidationError("cost matrix contains non-finite entries")
    return delta


def _diag_range(d: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Padded-coordinate cells (i, j) with i + j = d, 1 <= i, j <= k."""
    lo = max(1, d - k)
    hi = min(k, d - 1)
    ii = np.arange(lo, hi + 1)
    return ii, d - ii


def dtw_classic(delta) -> tuple[float, np.ndarray]:
    """Classical dynamic time warping over a square cost matrix.

    Returns the minimal accumulated cost over all monotone alignment paths
    from cell (0, 0) to (k-1, k-1) and the argmin path as a binary k x k
    matrix. Ties during backtracking prefer the diagonal predecessor, then
    the one advancing the prediction (row) index, then the column one.
    """
    delta = _check_square(delta)
    k = delta.shape[0]
    acc = np.full((k + 1, k + 1), np.inf)
    acc[1, 1] = delta[0, 0]
    acc[1, 2:] = delta[0, 1:].cumsum() + delta[0, 0]
    acc[2:, 1] = delta[1:, 0].cumsum() + delta[0, 0]
    for d in range(4, 2 * k + 1):
        ii, jj = _diag_range(d, k)
        interior = (ii > 1) & (jj > 1)
        ii, jj = ii[interior], jj[interior]
        if ii.size == 0:
            continue
        best = np.minimum(np.minimum(acc[ii - 1, jj - 1], acc[ii - 1, jj]), acc[ii, jj - 1])
        acc[ii, jj] = delta[ii - 1, jj - 1] + best
    path = np.zeros((k, k), dtype=np.int8)
    i = j = k
    path[k - 1, k - 1] = 1
    while (i, j) != (1, 1):
        if i > 1 and j > 1:
            candidates = (acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
            move = int(np.argmin(candidates))  # argmin takes the first minimum: diag > row > col
        elif i > 1:
            move = 1
        else:
            move = 2
        if move == 0:
            i, j = i - 1, j - 1
        elif move == 1:
            i = i - 1
        else:
            j = j - 1
        path[i - 1, j - 1] = 1
    return float(acc[k, k]), path


def _soft_forward(delta: np.ndarray, gamma: float) -> np.ndarray:
    """Accumulated smoothed-min cost table, padded to (k+2, k+2).

    Valid cells live at indices 1..k; pads hold +inf so the boundary soft-min
    terms vanish. Every valid cell is finite.
    """
    k = delta.shape[0]
    r = np.full((k + 2, k + 2), np.inf)
    r[1, 1] = delta[0, 0]
    if k > 1:
        r[1, 2 : k + 1] = delta[0, 1:].cumsum() + delta[0, 0]
        r[2 : k + 1, 1] = delta[1:, 0].cumsum() + delta[0, 0]
    for d in range(4, 2 * k + 1):
        ii, jj = _diag_range(d, k)
        interior = (ii > 1) & (jj > 1)
        ii, jj = ii[interior], jj[interior]
        if ii.size == 0:
            continue
        a = r[ii - 1, jj - 1]
        b = r[ii - 1, jj]
        c = r[ii, jj - 1]
        m = np.minimum(np.minimum(a, b), c)
        z = np.exp((m - a) / gamma) + np.exp((m - b) / gamma) + np.exp((m - c) / gamma)
        r[ii, jj] = delta[ii - 1, jj - 1] + m - gamma * np.log(z)
    return r


def soft_dtw(delta, gamma: float) -> float:
    """Smoothed DTW: -gamma * log of the Gibbs partition over alignment paths.

    Computed by the O(k^2) soft-min recursion with max-shifted exponentials;
    lower-bounds :func:`dtw_classic` and converges to it as gamma -> 0.
    """
    delta = _check_square(delta)
    if not gamma > 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    value = float(_soft_forward(delta, gamma)[delta.shape[0], delta.shape[0]])
    if not np.isfinite(value):
        raise FloatingPointError("soft DTW overflowed despite stabilization; increase gamma")
    return value


def _padded_tables(delta: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pad the cost/accumulator pair for the reverse recursions.

    The high pads switch to -inf so transition weights into out-of-range
    cells evaluate to exp(-inf) = 0; the virtual terminal (k+1, k+1) copies
    the final cell so the terminal edge has weight exactly 1.
    """
    k = delta.shape[0]
    rb = r.copy()
    rb[k + 1, :] = -np.inf
    rb[:, k + 1] = -np.inf
    rb[k + 1, k + 1] = rb[k, k]
    dp = np.zeros((k + 2, k + 2))
    dp[1 : k + 1, 1 : k + 1] = delta
    return dp, rb


def _occupancy(delta: np.ndarray, r: np.ndarray, gamma: float) -> np.ndarray:
    """Expected alignment-path occupancy under the Gibbs path distribution.

    This padded (k+2, k+2) table, restricted to 1..k, equals the gradient of
    :func:`soft_dtw` with respect to the cost matrix.
    """
    k = delta.shape[0]
    dp, rb = _padded_tables(delta, r)
    occ = np.zeros((k + 2, k + 2))
    occ[k + 1, k + 1] = 1.0
    for d in range(2 * k, 1, -1):
        ii, jj = _diag_range(d, k)
        cur = rb[ii, jj]
        w_row = np.exp((rb[ii + 1, jj] - cur - dp[ii + 1, jj]) / gamma)
        w_col = np.exp((rb[ii, jj + 1] - cur - dp[ii, jj + 1]) / gamma)
        w_diag = np.exp((rb[ii + 1, jj + 1] - cur - dp[ii + 1, jj + 1]) / gamma)
        occ[ii, jj] = (
            w_row * occ[ii + 1, jj] + w_col * occ[ii, jj + 1] + w_diag * occ[ii + 1, jj + 1]
        )
    return occ


def gibbs_alignment(delta, gamma: float) -> np.ndarray:
    """Smoothed alignment matrix: expectation of the path indicator per cell."""
    delta = _check_square(delta)
    if not gamma > 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    k = delta.shape[0]
    r = _soft_forward(delta, gamma)
    return _occupancy(delta, r, gamma)[1 : k + 1, 1 : k + 1]


def temporal_loss(delta, omega, gamma: float) -> float:
    """Expected temporal penalty of an alignment path under the Gibbs weights."""
    delta = _check_square(delta)
    omega = _check_square(omega)
    check_same_shape(delta, omega, "delta", "omega")
    return float(np.sum(gibbs_alignment(delta, gamma) * omega))


def tdi_hard(delta, omega) -> float:
    """Temporal penalty of the optimal (hard) warping path."""
    delta = _check_square(delta)
    omega = _check_square(omega)
    check_same_shape(delta, omega, "delta", "omega")
    _, path = dtw_classic(delta)
    return float(np.sum(path * omega))


def _temporal_cost_grad(
    delta: np.ndarray, omega: np.ndarray, r: np.ndarray, occ: np.ndarray, gamma: float
) -> np.ndarray:
    """d(sum(occupancy * omega))/d(delta), reverse-mode through both recursions.

    Pass 1 retraces the occupancy recursion in increasing diagonal order,
    pushing adjoints along each transition edge and collecting the edge
    weights' sensitivities to the accumulator and the costs. Pass 2 then
    retraces the value recursion in decreasing order, propagating the
    accumulator adjoints through the soft-min weights down to the costs.
    """
    k = delta.shape[0]
    dp, rb = _padded_tables(delta, r)
    occ_bar = np.zeros((k + 2, k + 2))
    occ_bar[1 : k + 1, 1 : k + 1] = omega
    r_bar = np.zeros((k + 2, k + 2))
    d_bar = np.zeros((k + 2, k + 2))
    for d in range(2, 2 * k + 1):
        ii, jj = _diag_range(d, k)
        eb = occ_bar[ii, jj]
        cur = rb[ii, jj]
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            si, sj = ii + di, jj + dj
            valid = (si <= k) & (sj <= k)
            if not np.any(valid):
                continue
            pi, pj = ii[valid], jj[valid]
            si, sj = si[valid], sj[valid]
            w = np.exp((rb[si, sj] - cur[valid] - dp[si, sj]) / gamma)
            occ_bar[si, sj] += eb[valid] * w
            t = eb[valid] * occ[si, sj] * w / gamma
            r_bar[si, sj] += t
            d_bar[si, sj] -= t
            r_bar[pi, pj] -= t
    for d in range(2 * k, 1, -1):
        ii, jj = _diag_range(d, k)
        rbar_cur = r_bar[ii, jj]
        d_bar[ii, jj] += rbar_cur
        cur = rb[ii, jj]
        dcur = dp[ii, jj]
        for di, dj in ((-1, -1), (-1, 0), (0, -1)):
            ni, nj = ii + di, jj + dj
            valid = (ni >= 1) & (nj >= 1)
            if not np.any(valid):
                continue
            ni, nj = ni[valid], nj[valid]
            p = np.exp((cur[valid] - dcur[valid] - rb[ni, nj]) / gamma)
            r_bar[ni, nj] += rbar_cur[valid] * p
    return d_bar[1 : k + 1, 1 : k + 1]


def _chain_to_prediction(
    cost_grad: np.ndarray, y_pred: np.ndarray, y_true: np.ndarray
) -> np.ndarray:
    """Chain a cost-matrix gradient through the squared-Euclidean cells."""
    row = cost_grad.sum(axis=1)
    return 2.0 * (row[:, None] * y_pred - cost_grad @ y_true)


def _check_grad_gamma(gamma: float) -> None:
    if not gamma > 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    if gamma < GAMMA_GRAD_MIN:
        raise ValidationError(
            f"gamma={gamma} is too small for stable gradient exponentials; "
            f"use gamma >= {GAMMA_GRAD_MIN} (values may still be computed)"
        )


def soft_dtw_grad(y_pred, y_true, gamma: float) -> np.ndarray:
    """Exact gradient of the smoothed DTW value with respect to the prediction."""
    _check_grad_gamma(gamma)
    y_pred = _as_trajectory(y_pred, "y_pred")
    y_true = _as_trajectory(y_true, "y_true")
    delta = cost_matrix(y_pred, y_true)
    occ = gibbs_alignment(delta, gamma)
    return _chain_to_prediction(occ, y_pred, y_true)


def temporal_loss_grad(y_pred, y_true, gamma: float, omega=None) -> np.ndarray:
    """Exact gradient of the smoothed temporal penalty w.r.t. the prediction."""
    _check_grad_gamma(gamma)
    y_pred = _as_trajectory(y_pred, "y_pred")
    y_true = _as_trajectory(y_true, "y_true")
    k = y_pred.shape[0]
    omega = omega_matrix(k) if omega is None else _check_square(omega)
    delta = cost_matrix(y_pred, y_true)
    r = _soft_forward(delta, gamma)
    occ = _occupancy(delta, r, gamma)
    cost_grad = _temporal_cost_grad(delta, omega, r, occ, gamma)
    return _chain_to_prediction(cost_grad, y_pred, y_true)


def dilate(y_pred, y_true, cfg: LossConfig) -> float:
    """Convex combination of the smoothed shape and temporal terms."""
    y_pred = _as_trajectory(y_pred, "y_pred")
    y_true = _as_trajectory(y_true, "y_true")
    check_same_shape(y_pred, y_true, "y_pred", "y_true")
    delta = cost_matrix(y_pred, y_true)
    k = delta.shape[0]
    shape_term = soft_dtw(delta, cfg.gamma) if cfg.alpha > 0.0 else 0.0
    if cfg.alpha < 1.0:
        temp_term = temporal_loss(delta, omega_matrix(k), cfg.gamma)
    else:
        temp_term = 0.0
    return cfg.alpha * shape_term + (1.0 - cfg.alpha) * temp_term


def dilate_grad(y_pred, y_true, cfg: LossConfig) -> np.ndarray:
    """Exact gradient of :func:`dilate` with respect to the prediction."""
    _check_grad_gamma(cfg.gamma)
    y_pred = _as_trajectory(y_pred, "y_pred")
    y_true = _as_trajectory(y_true, "y_true")
    check_same_shape(y_pred, y_true, "y_pred", "y_true")
    delta = cost_matrix(y_pred, y_true)
    k = delta.shape[0]
    r = _soft_forward(delta, cfg.gamma)
    occ = _occupancy(delta, r, cfg.gamma)
    cost_grad = np.zeros_like(delta)
    if cfg.alpha > 0.0:
        cost_grad += cfg.alpha * occ[1 : k + 1, 1 : k + 1]
    if cfg.alpha < 1.0:
        temporal_part = _temporal_cost_grad(delta, omega_matrix(k), r, occ, cfg.gamma)
        cost_grad += (1.0 - cfg.alpha) * temporal_part
    return _chain_to_prediction(cost_grad, y_pred, y_true)


def loss_value(y_pred, y_true, cfg: LossConfig) -> float:
    """Trajectory loss selected by ``cfg.kind``."""
    if cfg.kind == "mse":
        return mse_multi(y_pred, y_true)
    return dilate(y_pred, y_true, cfg)


def loss_grad(kind: str, y_pred, y_true, cfg: LossConfig) -> np.ndarray:
    """Gradient of the selected trajectory loss with respect to the prediction."""
    if kind == "mse":
        return mse_multi_grad(y_pred, y_true)
    if kind == "dilate":
        return dilate_grad(y_pred, y_true, cfg)
    raise ValidationError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")
