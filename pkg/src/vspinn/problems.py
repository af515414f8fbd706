"""PDE catalog and the variable-scaling transform.

Every problem is written once, in original coordinates. A scaled problem keeps
the same residual and constraints and only carries per-coordinate factors: the
network sees scaled coordinates ``xs = factor * x``, a k-th derivative along a
scaled axis picks up ``factor**k``, and coefficient functions are evaluated at
``xs / factor``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .diffcore import Jet2, Tape, Var, jet_apply, jet_seed
from .network import BoundMlp, forward_jets


class DomainError(ValueError):
    """A point lies outside the geometry or off a constraint locus."""


class NoExactSolution(LookupError):
    """The problem has no closed-form solution."""


# --------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class Face:
    """The part of the box boundary where coordinate ``axis`` is at ``side``."""

    axis: int
    side: str  # "lo" or "hi"


@dataclass(frozen=True)
class Circle:
    """Boundary of the circular hole."""


Locus = Face | Circle


@dataclass(frozen=True)
class Geometry:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    hole_center: tuple[float, ...] | None = None
    hole_radius: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    def scaled(self, factors: Sequence[float]) -> Geometry:
        f = np.asarray(factors, dtype=np.float64)
        if self.hole_center is None:
            return Geometry(tuple(np.asarray(self.lo) * f), tuple(np.asarray(self.hi) * f))
        if not np.all(f == f[0]):
            raise ValueError("a circular hole needs the same factor on every axis")
        return Geometry(
            tuple(np.asarray(self.lo) * f),
            tuple(np.asarray(self.hi) * f),
            tuple(np.asarray(self.hole_center) * f),
            self.hole_radius * float(f[0]),
        )

    def _tol(self) -> float:
        return 1e-9 * max(1.0, float(np.max(np.abs(np.r_[self.lo, self.hi]))))

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Mask of points in the closed domain (box minus open hole)."""
        x = np.atleast_2d(x)
        tol = self._tol()
        ok = np.all((x >= np.asarray(self.lo) - tol) & (x <= np.asarray(self.hi) + tol), axis=1)
        if self.hole_center is not None:
            r = np.linalg.norm(x - np.asarray(self.hole_center), axis=1)
            ok &= r >= self.hole_radius - tol
        return ok

    def measure(self, locus: Locus) -> float:
        """Length/area of a boundary piece; a point face in 1D counts as 1."""
        if isinstance(locus, Circle):
            if self.hole_center is None:
                raise ValueError("geometry has no hole")
            return 2.0 * math.pi * self.hole_radius if self.dim == 2 else 0.0
        others = [e for i, e in enumerate(self.extent) if i != locus.axis]
        return float(np.prod(others)) if others else 1.0

    def face_value(self, face: Face) -> float:
        return (self.lo if face.side == "lo" else self.hi)[face.axis]

    def on_locus(self, locus: Locus, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        tol = self._tol()
        if isinstance(locus, Circle):
            r = np.linalg.norm(x - np.asarray(self.hole_center), axis=1)
            return np.abs(r - self.hole_radius) <= tol
        on = np.abs(x[:, locus.axis] - self.face_value(locus)) <= tol
        return on & self.contains(x)

    def sample_locus(self, locus: Locus, n: int, rng: np.random.Generator) -> np.ndarray:
        if isinstance(locus, Circle):
            theta = rng.uniform(0.0, 2.0 * math.pi, n)
            c = np.asarray(self.hole_center)
            return c + self.hole_radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        pts = rng.uniform(np.asarray(self.lo), np.asarray(self.hi), size=(n, self.dim))
        pts[:, locus.axis] = self.face_value(locus)
        return pts

    def hole_fraction(self) -> float:
        if self.hole_center is None:
            return 0.0
        return math.pi * self.hole_radius**2 / float(np.prod(self.extent))


# --------------------------------------------------------------------------
# problem data


@dataclass(frozen=True)
class ScaleMap:
    factors: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(float(f) for f in self.factors))
        if any(not f >= 1.0 for f in self.factors):
            raise ValueError("scale factors must all be >= 1")

    @property
    def N(self) -> float:
        return max(self.factors)


CONSTRAINT_KINDS = (
    "dirichlet",
    "coordinate_derivative",
    "periodic_pair",
    "periodic_derivative_pair",
    "component_dirichlet",
)


@dataclass(frozen=True)
class ConstraintSpec:
    """One boundary/initial condition.

    ``target`` maps original coordinates (B, d) to target values (B,). For
    ``coordinate_derivative`` it is the derivative in original units; in a
    scaled problem the network derivative is matched to ``target / factor``.
    """

    name: str
    kind: str
    locus: Locus
    target: Callable[[np.ndarray], np.ndarray] | None = None
    output_component: int = 0
    direction: int | None = None
    pair: Face | None = None

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind in ("periodic_pair", "periodic_derivative_pair"):
            if not (isinstance(self.locus, Face) and isinstance(self.pair, Face)):
                raise ValueError("periodic constraints pair two faces")
            if self.locus.axis != self.pair.axis:
                raise ValueError("periodic faces must be opposite faces of one axis")
        if self.kind in ("coordinate_derivative", "periodic_derivative_pair") and self.direction is None:
            raise ValueError(f"{self.kind} needs a direction")


class Derivs:
    """Field values and derivatives in original units, each of shape (B,)."""

    def __init__(self, values, firsts, seconds, factors):
        self._u = values
        self._d1 = firsts
        self._d2 = seconds
        self._f = factors

    def u(self, k: int = 0) -> Var:
        return self._u[k]

    def d1(self, k: int, axis: int) -> Var:
        v = self._d1[(k, axis)]
        f = self._f[axis]
        return v if f == 1.0 else v * f

    def d2(self, k: int, axis: int) -> Var:
        v = self._d2[(k, axis)]
        f = self._f[axis]
        return v if f == 1.0 else v * (f * f)


ResidualFn = Callable[[np.ndarray, Derivs], list]
ExactFn = Callable[[list, object], list]


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    geometry: Geometry  # original (unscaled) geometry
    residual: ResidualFn
    directions: tuple[int, ...]  # axes whose derivatives the residual reads
    constraints: tuple[ConstraintSpec, ...]
    output_dim: int = 1
    lambda_res: float = 1.0
    lambda_data: float = 1.0
    scale: ScaleMap | None = None
    scaled_axes: tuple[int, ...] = ()
    default_weights: Callable[[float], tuple[float, float]] = lambda N: (1.0, 1.0)
    exact: ExactFn | None = None
    params: dict = field(default_factory=dict)
    coord_names: tuple[str, ...] = ("x",)

    def __post_init__(self):
        if self.scale is None:
            object.__setattr__(self, "scale", ScaleMap((1.0,) * self.geometry.dim))

    @property
    def input_dim(self) -> int:
        return self.geometry.dim

    @property
    def factors(self) -> np.ndarray:
        return np.asarray(self.scale.factors)

    @property
    def N(self) -> float:
        return self.scale.N

    @property
    def domain(self) -> Geometry:
        """Geometry in the coordinates the network sees."""
        return self.geometry.scaled(self.scale.factors)

    def constraint(self, name: str) -> ConstraintSpec:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)


class _JetMath:
    """numpy-like namespace whose functions act on Jet2 values."""

    pi = math.pi

    @staticmethod
    def sin(a):
        return jet_apply("sin", a)

    @staticmethod
    def cos(a):
        return jet_apply("cos", a)

    @staticmethod
    def exp(a):
        return jet_apply("exp", a)

    @staticmethod
    def tanh(a):
        return jet_apply("tanh", a)


jetmath = _JetMath()


# --------------------------------------------------------------------------
# catalog


def _wave() -> ProblemSpec:
    two_pi, ten_pi = 2.0 * math.pi, 10.0 * math.pi

    def residual(x, D):
        return [D.d2(0, 1) - D.d2(0, 0)]

    def exact(X, m):
        x, t = X
        return [m.sin(two_pi * x) * m.sin(two_pi * t) + m.sin(ten_pi * x) * m.sin(ten_pi * t)]

    zero = lambda x: np.zeros(len(x))
    velocity = lambda x: two_pi * np.sin(two_pi * x[:, 0]) + ten_pi * np.sin(ten_pi * x[:, 0])
    constraints = (
        ConstraintSpec("left", "dirichlet", Face(0, "lo"), zero),
        ConstraintSpec("right", "dirichlet", Face(0, "hi"), zero),
        ConstraintSpec("initial_value", "dirichlet", Face(1, "lo"), zero),
        ConstraintSpec("initial_velocity", "coordinate_derivative", Face(1, "lo"), velocity, direction=1),
    )
    return ProblemSpec(
        "wave1d",
        Geometry((0.0, 0.0), (1.0, 1.0)),
        residual,
        (0, 1),
        constraints,
        scaled_axes=(0, 1),
        default_weights=lambda N: (1.0 / N**4, 2.0),
        exact=exact,
        coord_names=("x", "t"),
    )


AC_DIFFUSION = 1e-4


def _allen_cahn() -> ProblemSpec:
    def residual(x, D):
        u = D.u(0)
        return [D.d1(0, 1) - AC_DIFFUSION * D.d2(0, 0) + 5.0 * u**3 - 5.0 * u]

    initial = lambda x: x[:, 0] ** 2 * np.cos(math.pi * x[:, 0])
    constraints = (
        ConstraintSpec("initial_value", "dirichlet", Face(1, "lo"), initial),
        ConstraintSpec("periodic_value", "periodic_pair", Face(0, "lo"), pair=Face(0, "hi")),
        ConstraintSpec(
            "periodic_slope", "periodic_derivative_pair", Face(0, "lo"), direction=0, pair=Face(0, "hi")
        ),
    )
    return ProblemSpec(
        "allen_cahn",
        Geometry((-1.0, 0.0), (1.0, 1.0)),
        residual,
        (0, 1),
        constraints,
        scaled_axes=(0,),
        default_weights=lambda N: (0.3, 2.0),
        coord_names=("x", "t"),
    )


def _boundary_layer(epsilon: float) -> ProblemSpec:
    if not epsilon > 0:
        raise ValueError("boundary_layer needs epsilon > 0")
    # 1 / (1 - exp(-1/eps)), which is exactly 1 in float64 for small eps
    c = -1.0 / math.expm1(-1.0 / epsilon)

    def residual(x, D):
        return [epsilon * D.d2(0, 0) + D.d1(0, 0) + 1.0]

    def exact(X, m):
        (x,) = X
        return [c - x - c * m.exp(x * (-1.0 / epsilon))]

    zero = lambda x: np.zeros(len(x))
    constraints = (
        ConstraintSpec("left", "dirichlet", Face(0, "lo"), zero),
        ConstraintSpec("right", "dirichlet", Face(0, "hi"), zero),
    )
    return ProblemSpec(
        "boundary_layer",
        Geometry((0.0,), (1.0,)),
        residual,
        (0,),
        constraints,
        scaled_axes=(0,),
        default_weights=lambda N: (1.0, 20.0),
        exact=exact,
        params={"epsilon": epsilon},
    )


def _poisson(f: Callable[[np.ndarray], np.ndarray], exact: ExactFn | None, name: str) -> ProblemSpec:
    def residual(x, D):
        return [-D.d2(0, 0) - f(x[:, 0])]

    zero = lambda x: np.zeros(len(x))
    constraints = (
        ConstraintSpec("left", "dirichlet", Face(0, "lo"), zero),
        ConstraintSpec("right", "dirichlet", Face(0, "hi"), zero),
    )
    return ProblemSpec(
        name,
        Geometry((0.0,), (1.0,)),
        residual,
        (0,),
        constraints,
        scaled_axes=(0,),
        # dividing the scaled equation by N^2 as in -v'' = f(x/N)/N^2
        default_weights=lambda N: (1.0 / N**4, 1.0),
        exact=exact,
    )


NS_LENGTH, NS_HEIGHT = 1.1, 0.41
NS_CENTER, NS_RADIUS = (0.2, 0.2), 0.05


def _navier_stokes(mu: float = 0.02, rho: float = 1.0) -> ProblemSpec:
    nu = mu / rho

    def residual(x, D):
        u, v = D.u(0), D.u(1)
        ux, uy, vx, vy = D.d1(0, 0), D.d1(0, 1), D.d1(1, 0), D.d1(1, 1)
        px, py = D.d1(2, 0), D.d1(2, 1)
        lap_u = D.d2(0, 0) + D.d2(0, 1)
        lap_v = D.d2(1, 0) + D.d2(1, 1)
        return [
            ux + vy,
            u * ux + v * uy + px * (1.0 / rho) - nu * lap_u,
            u * vx + v * vy + py * (1.0 / rho) - nu * lap_v,
        ]

    zero = lambda x: np.zeros(len(x))
    inlet = lambda x: 4.0 * (NS_HEIGHT - x[:, 1]) * x[:, 1] / NS_HEIGHT**2
    cd = "component_dirichlet"
    constraints = (
        ConstraintSpec("inlet_u", cd, Face(0, "lo"), inlet, 0),
        ConstraintSpec("inlet_v", cd, Face(0, "lo"), zero, 1),
        ConstraintSpec("outlet_p", cd, Face(0, "hi"), zero, 2),
        ConstraintSpec("bottom_u", cd, Face(1, "lo"), zero, 0),
        ConstraintSpec("bottom_v", cd, Face(1, "lo"), zero, 1),
        ConstraintSpec("top_u", cd, Face(1, "hi"), zero, 0),
        ConstraintSpec("top_v", cd, Face(1, "hi"), zero, 1),
        ConstraintSpec("cylinder_u", cd, Circle(), zero, 0),
        ConstraintSpec("cylinder_v", cd, Circle(), zero, 1),
    )
    return ProblemSpec(
        "navier_stokes",
        Geometry((0.0, 0.0), (NS_LENGTH, NS_HEIGHT), NS_CENTER, NS_RADIUS),
        residual,
        (0, 1),
        constraints,
        output_dim=3,
        scaled_axes=(0, 1),
        default_weights=lambda N: (1.0 / N**2, 2.0),
        params={"mu": mu, "rho": rho},
        coord_names=("x", "y"),
    )


PROBLEMS = ("wave1d", "allen_cahn", "boundary_layer", "poisson_sin", "poisson_generic", "navier_stokes")


def make_problem(name: str, **params) -> ProblemSpec:
    """Unscaled problem with unit loss weights."""
    if name == "wave1d":
        return _wave()
    if name == "allen_cahn":
        return _allen_cahn()
    if name == "boundary_layer":
        return _boundary_layer(float(params.get("epsilon", 1e-6)))
    if name == "poisson_sin":
        pi2 = math.pi**2
        return _poisson(lambda x: pi2 * np.sin(math.pi * x), lambda X, m: [m.sin(math.pi * X[0])], name)
    if name == "poisson_generic":
        if "f" not in params:
            raise ValueError("poisson_generic needs a source function f")
        return _poisson(params["f"], params.get("exact"), name)
    if name == "navier_stokes":
        return _navier_stokes(float(params.get("mu", 0.02)), float(params.get("rho", 1.0)))
    raise ValueError(f"unknown problem {name!r}; choose from {PROBLEMS}")


def scale_problem(spec: ProblemSpec, N: float, weights: tuple[float, float] | None = None) -> ProblemSpec:
    """Zoom the problem in by ``N`` along its scaled axes.

    ``weights=None`` installs the problem's default (lambda_res, lambda_data)
    for the resulting total scale.
    """
    if not N >= 1:
        raise ValueError(f"scale factor N must be >= 1, got {N}")
    factors = list(spec.scale.factors)
    for axis in spec.scaled_axes:
        factors[axis] *= float(N)
    scale = ScaleMap(tuple(factors))
    lam_res, lam_data = spec.default_weights(scale.N) if weights is None else weights
    return replace(spec, scale=scale, lambda_res=float(lam_res), lambda_data=float(lam_data))


# --------------------------------------------------------------------------
# evaluation of residuals and constraints on a model


@dataclass
class FunctionModel:
    """A closed-form field standing in for the network.

    ``fn(X, m)`` receives one coordinate per input (numpy arrays or Jet2) and
    a math namespace, and returns one output per field component.
    """

    tape: Tape
    fn: ExactFn
    output_dim: int = 1


def exact_model(tape: Tape, spec: ProblemSpec) -> FunctionModel:
    """The exact solution expressed in the spec's (scaled) coordinates."""
    if spec.exact is None:
        raise NoExactSolution(spec.name)
    inv = 1.0 / spec.factors

    def fn(X, m):
        return spec.exact([xi * float(s) if s != 1.0 else xi for xi, s in zip(X, inv)], m)

    return FunctionModel(tape, fn, spec.output_dim)


Model = BoundMlp | FunctionModel


def model_fields(model: Model, x: np.ndarray, directions: Sequence[int]):
    """(values, firsts, seconds) dicts keyed by component / (component, axis)."""
    directions = tuple(directions)
    if isinstance(model, BoundMlp):
        value, jets = forward_jets(model, x, directions)
        n_out = model.config.output_dim
        values = {k: value.col(k) for k in range(n_out)}
        firsts = {(k, a): jets[a][0].col(k) for a in directions for k in range(n_out)}
        seconds = {(k, a): jets[a][1].col(k) for a in directions for k in range(n_out)}
        return values, firsts, seconds
    tape = model.tape
    coords = [tape.const(x[:, i]) for i in range(x.shape[1])]
    values, firsts, seconds = {}, {}, {}
    for a in directions or (None,):
        X = [jet_seed(c, active=(i == a)) for i, c in enumerate(coords)]
        outs = model.fn(X, jetmath)
        for k, o in enumerate(outs):
            values.setdefault(k, o.value)
            if a is not None:
                firsts[(k, a)] = o.d1
                seconds[(k, a)] = o.d2
    return values, firsts, seconds


def residual_at(spec: ProblemSpec, model: Model, points: np.ndarray) -> list[Var]:
    """Residual components at scaled-coordinate points, each of shape (B,)."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    inside = spec.domain.contains(x)
    if not np.all(inside):
        bad = x[~inside][0]
        raise DomainError(f"point {bad.tolist()} lies outside the domain of {spec.name}")
    values, firsts, seconds = model_fields(model, x, spec.directions)
    D = Derivs(values, firsts, seconds, spec.scale.factors)
    return spec.residual(x / spec.factors, D)


def scaled_target(spec: ProblemSpec, c: ConstraintSpec, points: np.ndarray) -> np.ndarray:
    """What the network itself must match at scaled-coordinate points."""
    x = np.atleast_2d(points) / spec.factors
    t = np.asarray(c.target(x), dtype=np.float64)
    if c.kind == "coordinate_derivative":
        t = t / spec.factors[c.direction]
    return t


def partner_points(spec: ProblemSpec, c: ConstraintSpec, points: np.ndarray) -> np.ndarray:
    other = np.array(points, dtype=np.float64, copy=True)
    other[:, c.pair.axis] = spec.domain.face_value(c.pair)
    return other


def constraint_at(spec: ProblemSpec, model: Model, c: ConstraintSpec, points: np.ndarray) -> Var:
    """Mismatch of one constraint at scaled-coordinate points on its locus."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    on = spec.domain.on_locus(c.locus, x)
    if not np.all(on):
        bad = x[~on][0]
        raise DomainError(f"point {bad.tolist()} is not on the locus of constraint {c.name!r}")
    k = c.output_component
    if c.kind in ("dirichlet", "component_dirichlet"):
        values, _, _ = model_fields(model, x, ())
        return values[k] - scaled_target(spec, c, x)
    if c.kind == "coordinate_derivative":
        _, firsts, _ = model_fields(model, x, (c.direction,))
        return firsts[(k, c.direction)] - scaled_target(spec, c, x)
    both = np.concatenate([x, partner_points(spec, c, x)])
    n = len(x)
    if c.kind == "periodic_pair":
        values, _, _ = model_fields(model, both, ())
        v = values[k]
    else:
        _, firsts, _ = model_fields(model, both, (c.direction,))
        v = firsts[(k, c.direction)]
    tape = v.tape
    first = np.zeros((n, 2 * n))
    first[np.arange(n), np.arange(n)] = 1.0
    second = np.zeros((n, 2 * n))
    second[np.arange(n), n + np.arange(n)] = 1.0
    # selection matrices keep the pair difference on the tape
    return tape.const(first - second) @ v


def exact_solution(spec: ProblemSpec, points: np.ndarray) -> np.ndarray:
    """Closed-form solution at ORIGINAL-coordinate points, shape (B, output_dim)."""
    if spec.exact is None:
        raise NoExactSolution(f"{spec.name} has no closed-form solution")
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    outs = spec.exact([x[:, i] for i in range(x.shape[1])], np)
    return np.stack([np.broadcast_to(np.asarray(o, dtype=np.float64), (len(x),)) for o in outs], axis=1)
