"""Loss assembly, Adam, the training loop and zoom-out evaluation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .diffcore import Tape, Var, backward
from .network import MlpConfig, MlpParams, bind, evaluate, init_params
from .problems import (
    DomainError,
    FunctionModel,
    Model,
    NoExactSolution,
    ProblemSpec,
    constraint_at,
    exact_solution,
    residual_at,
)
from .sampling import SamplePlan, sample_boundary, sample_interior


class NumericalError(ArithmeticError):
    """Non-finite loss, residual or gradient during training."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # lr * lr_decay_rate ** (epoch / lr_decay_steps); rate 1.0 disables decay
    lr_decay_rate: float = 1.0
    lr_decay_steps: int = 1000
    plan: SamplePlan = field(default_factory=SamplePlan)
    N: float = 1.0
    weights: tuple[float, float] | None = None  # (lambda_res, lambda_data); None keeps the spec's
    eval_every: int = 100
    eval_grid: tuple[int, ...] = (1001,)
    seed: int | None = None  # overrides network and sampling seeds when set

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: MlpParams) -> AdamState:
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(
    state: AdamState,
    params: MlpParams,
    grads: Sequence[np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[AdamState, MlpParams]:
    arrays = params.arrays()
    if len(grads) != len(arrays) or any(g.shape != a.shape for g, a in zip(grads, arrays)):
        raise ValueError("gradient shapes do not match parameters")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient")
    t = state.step + 1
    m = [beta1 * mi + (1.0 - beta1) * g for mi, g in zip(state.m, grads)]
    v = [beta2 * vi + (1.0 - beta2) * (g * g) for vi, g in zip(state.v, grads)]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new = [a - lr * (mi / c1) / (np.sqrt(vi / c2) + eps) for a, mi, vi in zip(arrays, m, v)]
    return AdamState(m, v, t), MlpParams.from_arrays(params.config, new)


# --------------------------------------------------------------------------
# loss


@dataclass
class LossTerms:
    total: Var
    res: Var
    data: Var


def _finite_or_raise(v: Var, points: np.ndarray, what: str) -> None:
    vals = v.value
    if not np.all(np.isfinite(vals)):
        idx = int(np.flatnonzero(~np.isfinite(np.ravel(vals)))[0])
        raise NumericalError(f"non-finite {what} at point {points[idx].tolist()}")


def assemble_loss(
    spec: ProblemSpec,
    model: Model,
    interior: np.ndarray,
    boundary: Sequence[tuple[np.ndarray, object]],
    weights: tuple[float, float] | None = None,
) -> LossTerms:
    """lambda_res * mean sum |residual|^2 + lambda_data * mean |mismatch|^2."""
    if len(interior) == 0 or sum(len(p) for p, _ in boundary) == 0:
        raise ValueError("interior and boundary point sets must be non-empty")
    lam_res, lam_data = (spec.lambda_res, spec.lambda_data) if weights is None else weights
    comps = residual_at(spec, model, interior)
    sq = None
    for r in comps:
        _finite_or_raise(r, interior, "residual")
        sq = r * r if sq is None else sq + r * r
    res = sq.sum() * (1.0 / len(interior))
    data = None
    count = 0
    for pts, c in boundary:
        if len(pts) == 0:
            continue
        mis = constraint_at(spec, model, c, pts)
        _finite_or_raise(mis, pts, f"mismatch of {c.name}")
        s = (mis * mis).sum()
        data = s if data is None else data + s
        count += len(pts)
    data = data * (1.0 / count)
    total = res * lam_res + data * lam_data
    return LossTerms(total, res, data)


# --------------------------------------------------------------------------
# evaluation


def eval_grid(spec: ProblemSpec, resolution: Sequence[int]) -> np.ndarray:
    """Tensor grid over the ORIGINAL box, minus any hole; shape (M, d)."""
    g = spec.geometry
    if len(resolution) == 1 and g.dim > 1:
        resolution = tuple(resolution) * g.dim
    if len(resolution) != g.dim:
        raise ValueError(f"grid needs {g.dim} resolutions")
    axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(g.lo, g.hi, resolution)]
    pts = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)
    return pts[g.contains(pts)]


def predict_grid(params, spec: ProblemSpec, grid: np.ndarray) -> np.ndarray:
    """Zoom-out prediction: u(x) = net(factors * x), for x in original coordinates."""
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    inside = spec.geometry.contains(grid)
    if not np.all(inside):
        raise DomainError(f"grid point {grid[~inside][0].tolist()} is outside the original domain")
    xs = grid * spec.factors
    if isinstance(params, MlpParams):
        return evaluate(params, xs)
    out = params(xs)
    return np.asarray(out, dtype=np.float64).reshape(len(grid), -1)


def rel_l2(pred: np.ndarray, ref: np.ndarray) -> float:
    ref = np.asarray(ref, dtype=np.float64)
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise ValueError("reference field has zero norm")
    return float(np.linalg.norm(np.asarray(pred, dtype=np.float64) - ref) / denom)


def relative_l2(params, spec: ProblemSpec, grid: np.ndarray, reference: np.ndarray | None = None) -> float:
    """||u_pred - u_ref|| / ||u_ref|| over ``grid`` (original coordinates)."""
    if reference is None:
        reference = exact_solution(spec, grid)
    pred = predict_grid(params, spec, grid)
    return rel_l2(pred.reshape(np.shape(reference)), reference)


# --------------------------------------------------------------------------
# learning curve


CURVE_HEADER = ("epoch", "loss_total", "loss_res", "loss_data", "rel_l2")


@dataclass
class LearningCurve:
    rows: list[tuple[int, float, float, float, float | None]] = field(default_factory=list)

    def append(self, epoch, total, res, data, err) -> None:
        if self.rows and epoch <= self.rows[-1][0]:
            raise ValueError("epochs must be strictly increasing")
        self.rows.append((int(epoch), float(total), float(res), float(data), None if err is None else float(err)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for e, t, r, d, err in self.rows:
            w.writerow([e, repr(t), repr(r), repr(d), "NA" if err is None else repr(err)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> LearningCurve:
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != CURVE_HEADER:
            raise ValueError(f"unexpected curve header {header}")
        curve = cls()
        for row in reader:
            if not row:
                continue
            err = None if row[4] == "NA" else float(row[4])
            curve.append(int(row[0]), float(row[1]), float(row[2]), float(row[3]), err)
        return curve

    @property
    def final_error(self) -> float | None:
        return self.rows[-1][4] if self.rows else None


# --------------------------------------------------------------------------
# training loop


@dataclass
class Evaluator:
    """Relative L2 against the exact solution or a reference field."""

    spec: ProblemSpec
    grid: np.ndarray | None
    reference: np.ndarray | None

    def __call__(self, params: MlpParams) -> float | None:
        if self.grid is None:
            return None
        return relative_l2(params, self.spec, self.grid, self.reference)


def make_evaluator(spec: ProblemSpec, resolution, reference=None) -> Evaluator:
    """``reference`` may be a ReferenceGrid-like object with ``points()`` and ``values``."""
    if reference is not None:
        return Evaluator(spec, reference.points(), reference.values.reshape(-1, reference.values.shape[-1]))
    try:
        grid = eval_grid(spec, resolution)
        exact_solution(spec, grid[:1])
    except NoExactSolution:
        return Evaluator(spec, None, None)
    return Evaluator(spec, grid, exact_solution(spec, grid))


def loss_and_grads(spec: ProblemSpec, params: MlpParams, interior, boundary, weights=None):
    tape = Tape()
    net = bind(tape, params)
    terms = assemble_loss(spec, net, interior, boundary, weights)
    tape.close()
    grads = net.grads(backward(tape, terms.total))
    return terms, grads


def train(
    spec: ProblemSpec,
    net_config: MlpConfig,
    tc: TrainConfig,
    reference=None,
    params: MlpParams | None = None,
    callback: Callable[[int, MlpParams, LossTerms], None] | None = None,
) -> tuple[MlpParams, LearningCurve]:
    """Adam on freshly sampled collocation points each epoch.

    Curve rows hold the losses of epoch ``e`` and the error of the parameters
    those losses were computed with.
    """
    if not math.isclose(spec.N, tc.N, rel_tol=1e-12):
        raise ValueError(f"spec is scaled by N={spec.N} but the train config says N={tc.N}")
    plan = tc.plan
    if tc.seed is not None:
        net_config = replace(net_config, seed=tc.seed)
        plan = replace(plan, seed=tc.seed)
    if net_config.input_dim != spec.input_dim or net_config.output_dim != spec.output_dim:
        raise ValueError("network shape does not match the problem")
    if params is None:
        params = init_params(net_config)
    evaluator = make_evaluator(spec, tc.eval_grid, reference)
    state = AdamState.zeros(params)
    curve = LearningCurve()
    for epoch in range(tc.epochs):
        interior = sample_interior(spec, plan, epoch)
        boundary = sample_boundary(spec, plan, epoch)
        try:
            terms, grads = loss_and_grads(spec, params, interior, boundary, tc.weights)
        except NumericalError as exc:
            raise NumericalError(f"{exc} at epoch {epoch}") from exc
        total = float(terms.total.value)
        if not math.isfinite(total):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        if epoch % tc.eval_every == 0 or epoch == tc.epochs - 1:
            curve.append(epoch, total, float(terms.res.value), float(terms.data.value), evaluator(params))
        if callback is not None:
            callback(epoch, params, terms)
        lr = tc.learning_rate * tc.lr_decay_rate ** (epoch / tc.lr_decay_steps)
        try:
            state, params = adam_step(state, params, grads, lr, tc.beta1, tc.beta2, tc.adam_eps)
        except NumericalError as exc:
            raise NumericalError(f"{exc} at epoch {epoch}") from exc
    return params, curve


# --------------------------------------------------------------------------
# diagnostics


def field_diagnostics(spec: ProblemSpec, params: MlpParams, interior, boundary) -> dict[str, float]:
    """RMS of every residual component and every constraint mismatch.

    Residual components are reported in original units as ``residual_<i>``;
    constraints under their own names. Points are in the spec's coordinates.
    """
    tape = Tape()
    net = bind(tape, params)
    out = {}
    for i, r in enumerate(residual_at(spec, net, interior)):
        out[f"residual_{i}"] = float(np.sqrt(np.mean(r.value**2)))
    for pts, c in boundary:
        if len(pts):
            mis = constraint_at(spec, net, c, pts)
            out[c.name] = float(np.sqrt(np.mean(mis.value**2)))
    return out
