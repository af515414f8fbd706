"""Empirical neural tangent kernel traces for the boundary and residual kernels.

Each trace is a mean of squared parameter-gradient norms, one backward pass
per point.  ``u`` is the first network output; ``u_xx`` is the second
derivative of that output along input coordinate 0.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .diffcore import Tape, backward
from .network import MlpConfig, MlpParams, bind, forward, forward_jets, init_params

MAX_KERNEL_POINTS = 256


def _as_points(params: MlpParams, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) == 0:
        raise ValueError("point set is empty")
    if pts.shape[1] != params.config.input_dim:
        raise ValueError(f"points must have {params.config.input_dim} coordinates")
    return pts


def point_gradient(params: MlpParams, point, quantity: str = "u") -> np.ndarray:
    """Flattened d(quantity)/d(theta) at one point, quantity in {"u", "u_xx"}."""
    if quantity not in ("u", "u_xx"):
        raise ValueError("quantity must be 'u' or 'u_xx'")
    tape = Tape()
    net = bind(tape, params)
    x = np.asarray(point, dtype=np.float64).reshape(1, -1)
    if quantity == "u":
        out = forward(net, x)
    else:
        _, jets = forward_jets(net, x, (0,))
        out = jets[0][1]
    seed = out.col(0).sum()
    tape.close()
    grads = net.grads(backward(tape, seed))
    return np.concatenate([g.ravel() for g in grads])


def _contributions(params: MlpParams, points, quantity: str) -> np.ndarray:
    pts = _as_points(params, points)
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        g = point_gradient(params, p, quantity)
        out[i] = float(g @ g)
    return out


def kuu_contributions(params: MlpParams, points) -> np.ndarray:
    """Per-point ||du/dtheta||^2."""
    return _contributions(params, points, "u")


def krr_contributions(params: MlpParams, points) -> np.ndarray:
    """Per-point ||du_xx/dtheta||^2."""
    return _contributions(params, points, "u_xx")


def trace_kuu(params: MlpParams, points) -> float:
    """Tr(K_uu) / N_b."""
    return float(np.mean(kuu_contributions(params, points)))


def trace_krr(params: MlpParams, points) -> float:
    """Tr(K_rr) / N_r with the residual taken as u_xx."""
    return float(np.mean(krr_contributions(params, points)))


def avg_rate(params: MlpParams, boundary_points, interior_points) -> float:
    return trace_kuu(params, boundary_points) + trace_krr(params, interior_points)


def closed_form_kuu_limit(x):
    """Infinite-width Tr(K_uu) per point for the one-hidden-layer cubic ReLU net.

    This polynomial leaves out the output-bias contribution, which adds exactly
    1 to every measured value (see :func:`kuu_limit_with_bias`).
    """
    x2 = np.asarray(x, dtype=np.float64) ** 2
    out = 21.0 * x2**3 + 63.0 * x2**2 + 63.0 * x2 + 21.0
    return float(out) if np.ndim(out) == 0 else out


def kuu_limit_with_bias(x):
    """Closed form including the output bias: 21 (x^2 + 1)^3 + 1."""
    return closed_form_kuu_limit(x) + 1.0


def loglog_slope(pairs: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares fit of log(value) = slope * log(N) + intercept."""
    slope, intercept, _ = _fit(pairs)
    return slope, intercept


def _fit(pairs) -> tuple[float, float, float]:
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 2:
        raise ValueError("need at least two (N, value) pairs")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError("loglog_slope needs positive finite N and values")
    lx, ly = np.log(arr[:, 0]), np.log(arr[:, 1])
    if np.ptp(lx) == 0:
        raise ValueError("all N values are equal")
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    dof = len(arr) - 2
    if dof > 0:
        resid = ly - A @ coef
        s2 = float(resid @ resid) / dof
        se = math.sqrt(s2 / float(((lx - lx.mean()) ** 2).sum()))
    else:
        se = 0.0
    return float(coef[0]), float(coef[1]), se


def kernel_matrices(params: MlpParams, boundary_points, interior_points) -> dict[str, np.ndarray]:
    """Full K_uu, K_rr and K_ru for small point sets."""
    b = _as_points(params, boundary_points)
    r = _as_points(params, interior_points)
    if len(b) > MAX_KERNEL_POINTS or len(r) > MAX_KERNEL_POINTS:
        raise ValueError(f"kernel matrices are limited to {MAX_KERNEL_POINTS} points per set")
    Ju = np.stack([point_gradient(params, p, "u") for p in b])
    Jr = np.stack([point_gradient(params, p, "u_xx") for p in r])
    return {"K_uu": Ju @ Ju.T, "K_rr": Jr @ Jr.T, "K_ru": Jr @ Ju.T}


# --------------------------------------------------------------------------
# Monte-Carlo measurement over scales and seeds


def cubic_ntk_config(width: int, seed: int = 0) -> MlpConfig:
    """One hidden layer, cubic ReLU, NTK parameterization, N(0, 1) init."""
    return MlpConfig(1, 1, (width,), activation="cubic_relu", parameterization="ntk_scaled", init="gaussian", seed=seed)


@dataclass
class NtkRow:
    N: float
    kuu: float
    kuu_se: float
    krr: float
    krr_se: float
    kuu_points: np.ndarray  # seed-averaged per-point contributions
    krr_points: np.ndarray


@dataclass
class NtkReport:
    width: int
    seeds: tuple[int, ...]
    rows: list[NtkRow] = field(default_factory=list)
    kuu_slope: float = float("nan")
    kuu_slope_ci: float = float("nan")
    krr_slope: float = float("nan")
    krr_slope_ci: float = float("nan")

    def fit(self) -> None:
        if len(self.rows) < 2:
            return
        s, _, se = _fit([(r.N, r.kuu) for r in self.rows])
        self.kuu_slope, self.kuu_slope_ci = s, 1.96 * se
        s, _, se = _fit([(r.N, r.krr) for r in self.rows])
        self.krr_slope, self.krr_slope_ci = s, 1.96 * se

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("N,trace_kuu,trace_kuu_se,trace_krr,trace_krr_se\n")
        for r in self.rows:
            buf.write(f"{r.N!r},{r.kuu!r},{r.kuu_se!r},{r.krr!r},{r.krr_se!r}\n")
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"width: {self.width}",
            f"seeds: {len(self.seeds)} ({', '.join(str(s) for s in self.seeds)})",
            "",
            f"{'N':>8} {'Tr(K_uu)/N_b':>14} {'se':>10} {'Tr(K_rr)/N_r':>14} {'se':>10}",
        ]
        for r in self.rows:
            lines.append(f"{r.N:>8g} {r.kuu:>14.6g} {r.kuu_se:>10.3g} {r.krr:>14.6g} {r.krr_se:>10.3g}")
        lines += [
            "",
            f"slope Tr(K_uu)/N_b: {self.kuu_slope:.4f} +/- {self.kuu_slope_ci:.4f}",
            f"slope Tr(K_rr)/N_r: {self.krr_slope:.4f} +/- {self.krr_slope_ci:.4f}",
        ]
        return "\n".join(lines) + "\n"


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def measure(
    scales: Sequence[float],
    width: int = 4096,
    seeds: Sequence[int] = tuple(range(16)),
    n_interior: int = 64,
    config: MlpConfig | None = None,
    sample_seed: int = 0,
) -> NtkReport:
    """Seed-averaged traces at initialization for the 1D domain [0, N].

    Boundary points are {0, N}; interior points are U((0, N)) draws shared by
    all seeds at a given N.
    """
    base = config if config is not None else cubic_ntk_config(width)
    if base.input_dim != 1:
        raise ValueError("trace measurement over [0, N] needs a 1D input")
    report = NtkReport(width=base.hidden[0], seeds=tuple(int(s) for s in seeds))
    for N in scales:
        if not N > 0:
            raise ValueError("scales must be positive")
        rng = np.random.default_rng([sample_seed, int(round(N * 1000))])
        interior = rng.uniform(0.0, N, size=(n_interior, 1))
        interior = interior[interior[:, 0] > 0]
        boundary = np.array([[0.0], [float(N)]])
        kuu_pts, krr_pts = [], []
        for s in report.seeds:
            params = init_params(replace(base, seed=s))
            kuu_pts.append(kuu_contributions(params, boundary))
            krr_pts.append(krr_contributions(params, interior))
        kuu_pts, krr_pts = np.array(kuu_pts), np.array(krr_pts)
        kuu, kuu_se = _mean_se(kuu_pts.mean(axis=1))
        krr, krr_se = _mean_se(krr_pts.mean(axis=1))
        report.rows.append(NtkRow(float(N), kuu, kuu_se, krr, krr_se, kuu_pts.mean(axis=0), krr_pts.mean(axis=0)))
    report.fit()
    return report


def seed_averaged_kuu(x: float, width: int, seeds: Sequence[int] = tuple(range(16))) -> tuple[float, float]:
    """Mean and standard error of ||du(x)/dtheta||^2 over fresh initializations."""
    vals = [trace_kuu(init_params(cubic_ntk_config(width, s)), [[x]]) for s in seeds]
    return _mean_se(np.array(vals))


class TraceMonitor:
    """Training callback that re-measures the averaged rate every ``every`` epochs."""

    def __init__(self, boundary_points, interior_points, every: int = 100):
        if every < 1:
            raise ValueError("every must be >= 1")
        self.boundary = np.asarray(boundary_points, dtype=np.float64)
        self.interior = np.asarray(interior_points, dtype=np.float64)
        self.every = every
        self.rows: list[tuple[int, float, float]] = []

    def __call__(self, epoch: int, params: MlpParams, terms=None) -> None:
        if epoch % self.every == 0:
            self.rows.append((epoch, trace_kuu(params, self.boundary), trace_krr(params, self.interior)))
