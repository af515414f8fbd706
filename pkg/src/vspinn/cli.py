"""Command-line front end: single trainings, scale sweeps, NTK traces, self-checks.

Usage::

    vspinn <train|sweep|ntk|check> --config <path> [--out <dir>] [--seed <int>]
           [--scale <N or comma list>] [--preset <name>]

Config files are UTF-8 text with one ``key = value`` per line; ``#`` starts a
comment. Lists are comma separated. ``n_boundary`` is either a total count or
``name:count`` pairs, one per boundary constraint. A ``preset = <name>`` line
(or ``--preset``) loads a preset first; every other key overrides it. A run
manifest (``manifest.json``) is also accepted as a config.

Exit codes: 0 success, 1 invalid configuration or failed self-check,
2 numerical failure during training.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .diffcore import Tape, check_gradient
from .network import ACTIVATIONS, BoundMlp, MlpConfig, bind, evaluate, forward_jets, init_params, save_checkpoint
from .ntk import cubic_ntk_config, closed_form_kuu_limit, kuu_limit_with_bias, measure, seed_averaged_kuu
from .problems import PROBLEMS, make_problem, scale_problem
from .reference import ReferenceGrid, allen_cahn_reference, load_reference
from .sampling import SamplePlan, sample_boundary, sample_interior
from .training import (
    LearningCurve,
    TrainConfig,
    assemble_loss,
    eval_grid,
    field_diagnostics,
    make_evaluator,
    train,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
COMMANDS = ("train", "sweep", "ntk", "check")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key."""


# --------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    # problem
    problem: str = "poisson_sin"
    epsilon: float = 1e-6  # boundary_layer
    mu: float = 0.02  # navier_stokes
    rho: float = 1.0  # navier_stokes
    N: float = 1.0
    scales: tuple[float, ...] = (1.0, 2.0)  # sweep and ntk
    lambda_res: float | None = None  # None: the problem's default for N
    lambda_data: float | None = None
    # network
    hidden: tuple[int, ...] = (32, 32, 32)
    activation: str = "tanh"
    parameterization: str = "standard"
    init: str = "glorot"
    init_std: float = 1.0
    # optimizer and loop
    epochs: int = 1000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay_rate: float = 1.0
    lr_decay_steps: int = 1000
    eval_every: int = 100
    eval_grid: tuple[int, ...] = ()  # empty: 256x101 wave/allen_cahn, 221x83 navier_stokes, 10001 in 1D
    # collocation points
    n_interior: int = 1000
    n_boundary: int | tuple[tuple[str, int], ...] = 100
    n_near_feature: int = 0
    annulus_inner: float = 1.0
    annulus_outer: float = 2.0
    resample_each_epoch: bool = True
    seed: int = 0
    # reference field: auto, none, imex, or a grid CSV path
    reference: str = "auto"
    reference_nx: int = 512
    reference_nt: int = 10000
    reference_stride: int = 2
    # ntk command
    ntk_width: int = 4096
    ntk_seeds: int = 16
    ntk_interior: int = 64
    ntk_closed_form_x: tuple[float, ...] = ()
    # check command
    check_cases: int = 50
    # sweep
    workers: int = 1
    out: str = "runs/out"

    def problem_params(self) -> dict:
        if self.problem == "boundary_layer":
            return {"epsilon": self.epsilon}
        if self.problem == "navier_stokes":
            return {"mu": self.mu, "rho": self.rho}
        return {}

    def weights(self) -> tuple[float, float] | None:
        if self.lambda_res is None and self.lambda_data is None:
            return None
        return (self.lambda_res, self.lambda_data)

    def net_config(self, spec) -> MlpConfig:
        return MlpConfig(
            spec.input_dim,
            spec.output_dim,
            self.hidden,
            self.activation,
            self.parameterization,
            self.init,
            self.init_std,
            self.seed,
        )

    def sample_plan(self) -> SamplePlan:
        nb = dict(self.n_boundary) if isinstance(self.n_boundary, tuple) else self.n_boundary
        return SamplePlan(
            self.n_interior,
            nb,
            self.n_near_feature,
            (self.annulus_inner, self.annulus_outer),
            self.seed,
            self.resample_each_epoch,
        )

    def train_config(self, N: float) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            lr_decay_rate=self.lr_decay_rate,
            lr_decay_steps=self.lr_decay_steps,
            plan=self.sample_plan(),
            N=N,
            weights=self.weights(),
            eval_every=self.eval_every,
            eval_grid=self.eval_grid or (),
        )

    def spec(self, N: float | None = None):
        base = make_problem(self.problem, **self.problem_params())
        return scale_problem(base, self.N if N is None else N, self.weights())

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in dataclasses.fields(self)}


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ",".join(f"{k}:{c}" for k, c in v)
        return ",".join(_format_value(x) for x in v)
    return str(v)


def _jsonable(v):
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return {k: c for k, c in v}
        return list(v)
    return v


def _parse_int(key: str, s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {s!r}") from None


def _parse_float(key: str, s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {s!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"{key}: must be finite, got {s!r}")
    return v


def _parse_bool(key: str, s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected true or false, got {s!r}")


def _items(s: str) -> list[str]:
    return [p.strip() for p in s.split(",") if p.strip()]


def _as_text(raw) -> str:
    """JSON values from a manifest, rendered in the config-file syntax."""
    if isinstance(raw, str):
        return raw
    if isinstance(raw, dict):
        return _format_value(tuple(raw.items()))
    if isinstance(raw, list):
        return _format_value(tuple(raw))
    return _format_value(raw)


def _parse_value(key: str, raw):
    """Convert a raw text (or JSON) value to the field's type."""
    kind = _FIELD_TYPES[key]
    s = _as_text(raw).strip()
    if kind == "str":
        if not s:
            raise ConfigError(f"{key}: empty value")
        return s
    if kind == "int":
        return _parse_int(key, s)
    if kind == "float":
        return _parse_float(key, s)
    if kind == "bool":
        return _parse_bool(key, s)
    if kind == "float | None":
        return None if s.lower() in ("none", "default", "") else _parse_float(key, s)
    if kind == "tuple[float, ...]":
        return tuple(_parse_float(key, p) for p in _items(s))
    if kind == "tuple[int, ...]":
        return tuple(_parse_int(key, p) for p in _items(s))
    if key == "n_boundary":
        if ":" not in s:
            return _parse_int(key, s)
        pairs = []
        for p in _items(s):
            name, _, count = p.partition(":")
            if not name.strip() or not count.strip():
                raise ConfigError(f"{key}: expected name:count, got {p!r}")
            pairs.append((name.strip(), _parse_int(f"{key}.{name.strip()}", count.strip())))
        return tuple(pairs)
    raise AssertionError(f"no parser for {key} ({kind})")


def _read_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
        pairs.append((key.strip(), value.strip()))
    return pairs


def parse_config(text: str, preset: str | None = None) -> RunConfig:
    """Parse a key/value config (or a run manifest) into a validated RunConfig."""
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest: not valid JSON ({exc})") from None
        raw = data.get("config", data)
        pairs = list(raw.items())
    else:
        pairs = _read_pairs(text)
    values: dict = {}
    for key, value in pairs:
        if key == "preset":
            preset = preset or str(value)
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{key}: unknown key")
        if key in values:
            raise ConfigError(f"{key}: given more than once")
        values[key] = _parse_value(key, value)
    base: dict = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        base = {k: _parse_value(k, v) for k, v in PRESETS[preset].items()}
    cfg = RunConfig(**{**base, **values})
    validate(cfg)
    return cfg


def _require(ok: bool, key: str, message: str) -> None:
    if not ok:
        raise ConfigError(f"{key}: {message}")


def validate(cfg: RunConfig) -> None:
    """Check every field, delegating to the owning modules where they validate."""
    _require(cfg.problem in PROBLEMS and cfg.problem != "poisson_generic", "problem",
             f"must be one of {[p for p in PROBLEMS if p != 'poisson_generic']}")
    _require(cfg.N >= 1, "N", f"scale factor must be >= 1, got {cfg.N}")
    for s in cfg.scales:
        _require(s >= 1, "scales", f"every scale factor must be >= 1, got {s}")
    _require(cfg.epsilon > 0, "epsilon", "must be positive")
    _require(cfg.mu > 0 and cfg.rho > 0, "mu" if cfg.mu <= 0 else "rho", "must be positive")
    _require((cfg.lambda_res is None) == (cfg.lambda_data is None), "lambda_res",
             "lambda_res and lambda_data must be given together")
    for key in ("lambda_res", "lambda_data"):
        v = getattr(cfg, key)
        _require(v is None or v >= 0, key, "must be >= 0")
    for key in ("epochs", "n_interior", "n_near_feature", "ntk_interior", "check_cases"):
        _require(getattr(cfg, key) >= 0, key, "must be >= 0")
    if isinstance(cfg.n_boundary, int):
        _require(cfg.n_boundary >= 0, "n_boundary", "must be >= 0")
    else:
        for name, count in cfg.n_boundary:
            _require(count >= 0, f"n_boundary.{name}", "must be >= 0")
    for key in ("lr_decay_steps", "eval_every", "ntk_width", "ntk_seeds", "workers", "reference_stride"):
        _require(getattr(cfg, key) >= 1, key, "must be >= 1")
    _require(cfg.lr_decay_rate > 0, "lr_decay_rate", "must be positive")
    for n in cfg.eval_grid:
        _require(n >= 2, "eval_grid", "every resolution must be >= 2")
    _require(cfg.activation in ACTIVATIONS, "activation", f"must be one of {ACTIVATIONS}")
    spec = _owned("problem", lambda: make_problem(cfg.problem, **cfg.problem_params()))
    _owned("hidden", lambda: cfg.net_config(spec))
    _owned("learning_rate", lambda: cfg.train_config(cfg.N))
    plan = _owned("n_boundary", cfg.sample_plan)
    if isinstance(cfg.n_boundary, tuple):
        names = {c.name for c in spec.constraints}
        for name, _ in cfg.n_boundary:
            _require(name in names, f"n_boundary.{name}", f"no such constraint; {cfg.problem} has {sorted(names)}")
    if cfg.eval_grid:
        _require(len(cfg.eval_grid) in (1, spec.input_dim), "eval_grid", f"give 1 or {spec.input_dim} resolutions")
    if plan.n_near_feature:
        _require(spec.geometry.hole_center is not None, "n_near_feature", f"{cfg.problem} has no hole")
    if cfg.reference not in ("auto", "none", "imex"):
        _require(Path(cfg.reference).is_file(), "reference", f"no such file {cfg.reference!r}")
    if cfg.reference == "imex":
        _require(cfg.problem == "allen_cahn", "reference", "the imex oracle solves allen_cahn only")


def _owned(key: str, build):
    try:
        return build()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


# --------------------------------------------------------------------------
# presets: `paper` budgets follow the published setups, `desk` budgets are the
# reduced settings used by the acceptance suite


_DECAY = {"learning_rate": "1e-3", "lr_decay_rate": "0.9", "lr_decay_steps": "1000"}
_AC_BOUNDARY = "initial_value:200,periodic_value:128,periodic_slope:128"

PRESETS: dict[str, dict[str, str]] = {
    "tiny": {
        "problem": "poisson_sin", "hidden": "8,8", "epochs": "50", "n_interior": "32",
        "n_boundary": "2", "eval_every": "10", "eval_grid": "101", "scales": "1,2",
    },
    "wave_paper": {
        "problem": "wave1d", "hidden": "128,128,128,128", "n_interior": "6400", "n_boundary": "512",
        "epochs": "60000", "N": "10", "scales": "1,4,10", "eval_every": "1000", **_DECAY,
    },
    "wave_desk": {
        "problem": "wave1d", "hidden": "64,64,64,64", "n_interior": "2000", "n_boundary": "256",
        "epochs": "20000", "N": "10", "scales": "1,4,10", "eval_every": "1000",
        "learning_rate": "3e-3", "lr_decay_rate": "0.9", "lr_decay_steps": "2000",
    },
    "allen_cahn_paper": {
        "problem": "allen_cahn", "hidden": "64,64,64,64", "n_interior": "10000", "n_boundary": _AC_BOUNDARY,
        "epochs": "40000", "N": "100", "scales": "1,100", "eval_every": "1000", **_DECAY,
    },
    "allen_cahn_desk": {
        "problem": "allen_cahn", "hidden": "32,32,32,32", "n_interior": "2500", "n_boundary": _AC_BOUNDARY,
        "epochs": "20000", "N": "100", "scales": "1,100", "eval_every": "1000",
        "learning_rate": "5e-3", "lr_decay_rate": "0.9", "lr_decay_steps": "2000",
    },
    "boundary_layer_paper": {
        "problem": "boundary_layer", "epsilon": "1e-6", "hidden": ",".join(["20"] * 8), "n_interior": "1000",
        "n_boundary": "left:1,right:1", "resample_each_epoch": "false", "epochs": "30000", "N": "1000",
        "scales": "1,1000", "eval_every": "1000", **_DECAY,
    },
    "boundary_layer_desk": {
        "problem": "boundary_layer", "epsilon": "1e-6", "hidden": ",".join(["20"] * 8), "n_interior": "1000",
        "n_boundary": "left:1,right:1", "resample_each_epoch": "false", "epochs": "10000", "N": "1000",
        "scales": "1,1000", "eval_every": "500", **_DECAY,
    },
    "navier_stokes_paper": {
        "problem": "navier_stokes", "hidden": "40,40,40,40,40", "n_interior": "6000", "n_near_feature": "600",
        "n_boundary": "1200", "epochs": "40000", "N": "10", "scales": "1,10", "eval_every": "1000", **_DECAY,
    },
    "navier_stokes_desk": {
        "problem": "navier_stokes", "hidden": "40,40,40,40,40", "n_interior": "3000", "n_near_feature": "300",
        "n_boundary": "600", "epochs": "10000", "N": "10", "scales": "1,10", "eval_every": "500",
        "learning_rate": "5e-3", "lr_decay_rate": "0.9", "lr_decay_steps": "2000",
    },
    "poisson_paper": {
        "problem": "poisson_sin", "hidden": "40000", "activation": "cubic_relu", "parameterization": "ntk_scaled",
        "init": "gaussian", "init_std": "0.1", "n_interior": "50", "n_boundary": "2", "resample_each_epoch": "false",
        "lambda_res": "1", "lambda_data": "1", "epochs": "3000", "scales": "1,2,4,1000", "eval_every": "100",
        "learning_rate": "1e-3", "lr_decay_rate": "0.3", "lr_decay_steps": "1000",
    },
    "poisson_desk": {
        "problem": "poisson_sin", "hidden": "4096", "activation": "cubic_relu", "parameterization": "ntk_scaled",
        "init": "gaussian", "init_std": "0.1", "n_interior": "50", "n_boundary": "2", "resample_each_epoch": "false",
        "lambda_res": "1", "lambda_data": "1", "epochs": "3000", "scales": "1,2,1000", "eval_every": "100",
        "learning_rate": "1e-3", "lr_decay_rate": "0.3", "lr_decay_steps": "1000",
    },
    "ntk_paper": {"ntk_width": "40000", "ntk_seeds": "16", "scales": "2,4,8,16,32", "ntk_closed_form_x": "0,1,2,5"},
    "ntk_desk": {"ntk_width": "4096", "ntk_seeds": "16", "scales": "2,4,8,16,32"},
}


# --------------------------------------------------------------------------
# reference fields


@lru_cache(maxsize=4)
def _imex_reference(nx: int, nt: int, stride: int) -> ReferenceGrid:
    grid = allen_cahn_reference(nx=nx, nt=nt)
    xs, ts = grid.axes
    return ReferenceGrid((xs[::stride], ts), grid.values[::stride], grid.fields, grid.note + f" stride={stride}")


def resolve_reference(cfg: RunConfig) -> ReferenceGrid | None:
    """The reference grid to measure errors against; None means closed form or nothing."""
    if cfg.reference == "none":
        return None
    if cfg.reference in ("auto", "imex"):
        if cfg.problem == "allen_cahn":
            return _imex_reference(cfg.reference_nx, cfg.reference_nt, cfg.reference_stride)
        return None
    return load_reference(cfg.reference)


# --------------------------------------------------------------------------
# charts


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_line_chart(
    series: dict[str, tuple[Sequence[float], Sequence[float]]],
    title: str,
    xlabel: str,
    ylabel: str,
    log_x: bool = False,
    log_y: bool = True,
    width: int = 640,
    height: int = 420,
) -> str:
    """A static line chart; non-positive values are dropped on log axes."""
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    cleaned = {}
    for name, (xs, ys) in series.items():
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)
               if y is not None and math.isfinite(float(y)) and (not log_y or float(y) > 0) and (not log_x or float(x) > 0)]
        if pts:
            cleaned[name] = pts
    tx = (lambda v: math.log10(v)) if log_x else (lambda v: v)
    ty = (lambda v: math.log10(v)) if log_y else (lambda v: v)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>']
    if not cleaned:
        out.append(f'<text x="{left + pw / 2}" y="{top + ph / 2}" text-anchor="middle">no data</text></svg>')
        return "\n".join(out) + "\n"
    allx = [tx(x) for pts in cleaned.values() for x, _ in pts]
    ally = [ty(y) for pts in cleaned.values() for _, y in pts]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    sx = lambda v: left + (tx(v) - x0) / (x1 - x0) * pw
    sy = lambda v: top + ph - (ty(v) - y0) / (y1 - y0) * ph
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for k in range(5):
        fy, fx = y0 + (y1 - y0) * k / 4, x0 + (x1 - x0) * k / 4
        py, px = top + ph - ph * k / 4, left + pw * k / 4
        ylab = f"1e{fy:.1f}" if log_y else f"{fy:.3g}"
        xlab = f"1e{fx:.1f}" if log_x else f"{fx:.3g}"
        out.append(f'<text x="{left - 6}" y="{py + 4:.1f}" text-anchor="end">{ylab}</text>')
        out.append(f'<text x="{px:.1f}" y="{top + ph + 16}" text-anchor="middle">{xlab}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {top + ph / 2})">{_esc(ylabel)}</text>')
    for i, (name, pts) in enumerate(cleaned.items()):
        color = _PALETTE[i % len(_PALETTE)]
        path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly + 4}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _curve_series(curve: LearningCurve) -> tuple[list[int], list[float], str]:
    epochs = [r[0] for r in curve.rows]
    errs = [r[4] for r in curve.rows]
    if curve.rows and all(e is not None for e in errs):
        return epochs, errs, "relative L2 error"
    return epochs, [r[1] for r in curve.rows], "total loss"


# --------------------------------------------------------------------------
# commands


def field_names(spec) -> tuple[str, ...]:
    if spec.name == "navier_stokes":
        return ("u", "v", "p")
    if spec.output_dim == 1:
        return ("u",)
    return tuple(f"u{i}" for i in range(spec.output_dim))


def prediction_csv(spec, params, points: np.ndarray) -> str:
    """Coordinate columns (original units) then one column per field."""
    from .training import predict_grid

    pred = predict_grid(params, spec, points)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(spec.coord_names) + list(field_names(spec)))
    for x, u in zip(points, pred):
        w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in u])
    return buf.getvalue()


DEFAULT_GRIDS = {"wave1d": (256, 101), "allen_cahn": (256, 101), "navier_stokes": (221, 83)}


def _default_resolution(spec) -> tuple[int, ...]:
    return DEFAULT_GRIDS.get(spec.name, (10001,) * spec.input_dim)


def run_train(cfg: RunConfig, out: Path, N: float | None = None) -> dict:
    """One training run; writes curve.csv, prediction.csv, checkpoint.txt,
    config.txt, curve.svg and manifest.json into ``out``."""
    N = cfg.N if N is None else float(N)
    cfg = replace(cfg, N=N, out=str(out))
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.spec(N)
    tc = cfg.train_config(N)
    if not tc.eval_grid:
        tc = replace(tc, eval_grid=_default_resolution(spec))
    reference = resolve_reference(cfg)
    start = time.perf_counter()
    params, curve = train(spec, cfg.net_config(spec), tc, reference=reference)
    wall = time.perf_counter() - start
    evaluator = make_evaluator(spec, tc.eval_grid, reference)
    grid = evaluator.grid if evaluator.grid is not None else eval_grid(spec, tc.eval_grid)
    (out / "curve.csv").write_text(curve.to_csv(), encoding="utf-8")
    (out / "prediction.csv").write_text(prediction_csv(spec, params, grid), encoding="utf-8")
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    save_checkpoint(params, out / "checkpoint.txt")
    xs, ys, label = _curve_series(curve)
    chart = svg_line_chart({f"N={N:g}": (xs, ys)}, f"{cfg.problem}, N={N:g}", "epoch", label)
    (out / "curve.svg").write_text(chart, encoding="utf-8")
    last = curve.rows[-1] if curve.rows else None
    manifest = {
        "command": "train",
        "version": __version__,
        "seed": cfg.seed,
        "N": N,
        "lambda": [spec.lambda_res, spec.lambda_data],
        "wall_time_s": wall,
        "final_loss": None if last is None else last[1],
        "final_rel_l2": None if last is None else last[4],
        "reference": None if reference is None else reference.note,
        "config": cfg.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def _sweep_member(args) -> dict:
    cfg, out, N = args
    return run_train(cfg, Path(out), N)


def run_sweep(cfg: RunConfig, out: Path) -> list[dict]:
    """One run per scale factor under ``out/N_<N>``, then comparison.csv and comparison.svg."""
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, str(out / f"N_{N:g}"), N) for N in cfg.scales]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_sweep_member, jobs))
    else:
        results = [_sweep_member(j) for j in jobs]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "lambda_res", "lambda_data", "final_epoch", "final_loss", "final_rel_l2"])
    series = {}
    for (_, member_out, N), m in zip(jobs, results):
        curve = LearningCurve.from_csv((Path(member_out) / "curve.csv").read_text(encoding="utf-8"))
        last_epoch = curve.rows[-1][0] if curve.rows else "NA"
        w.writerow([repr(float(N)), repr(m["lambda"][0]), repr(m["lambda"][1]), last_epoch,
                    "NA" if m["final_loss"] is None else repr(m["final_loss"]),
                    "NA" if m["final_rel_l2"] is None else repr(m["final_rel_l2"])])
        xs, ys, label = _curve_series(curve)
        series[f"N={N:g}"] = (xs, ys)
    (out / "comparison.csv").write_text(buf.getvalue(), encoding="utf-8")
    (out / "comparison.svg").write_text(
        svg_line_chart(series, f"{cfg.problem}: learning curves", "epoch", label), encoding="utf-8")
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    return results


def run_ntk(cfg: RunConfig, out: Path) -> dict:
    """Seed-averaged traces over ``scales`` plus optional closed-form comparisons."""
    out.mkdir(parents=True, exist_ok=True)
    seeds = tuple(range(cfg.ntk_seeds))
    start = time.perf_counter()
    report = measure(cfg.scales, width=cfg.ntk_width, seeds=seeds, n_interior=cfg.ntk_interior,
                     config=cubic_ntk_config(cfg.ntk_width), sample_seed=cfg.seed)
    text = report.to_text()
    rows = []
    for x in cfg.ntk_closed_form_x:
        mean, se = seed_averaged_kuu(x, cfg.ntk_width, seeds)
        rows.append((x, mean, se, closed_form_kuu_limit(x), kuu_limit_with_bias(x)))
    if rows:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "measured", "measured_se", "polynomial", "polynomial_plus_bias", "rel_dev_polynomial"])
        for x, mean, se, poly, with_bias in rows:
            w.writerow([repr(x), repr(mean), repr(se), repr(poly), repr(with_bias), repr(abs(mean - poly) / poly)])
        (out / "closed_form.csv").write_text(buf.getvalue(), encoding="utf-8")
        text += "\n" + "\n".join(
            f"x={x:g}: measured {mean:.6g} +/- {se:.3g}, 21x^6+63x^4+63x^2+21 = {poly:.6g} ({abs(mean - poly) / poly:.2%})"
            for x, mean, se, poly, _ in rows) + "\n"
    (out / "ntk_report.txt").write_text(text, encoding="utf-8")
    (out / "ntk.csv").write_text(report.to_csv(), encoding="utf-8")
    Ns = [r.N for r in report.rows]
    chart = svg_line_chart({"Tr(K_uu)/N_b": (Ns, [r.kuu for r in report.rows]),
                            "Tr(K_rr)/N_r": (Ns, [r.krr for r in report.rows])},
                           f"trace growth, width {report.width}", "N", "trace", log_x=True)
    (out / "ntk.svg").write_text(chart, encoding="utf-8")
    manifest = {"command": "ntk", "version": __version__, "seed": cfg.seed,
                "wall_time_s": time.perf_counter() - start,
                "kuu_slope": report.kuu_slope, "krr_slope": report.krr_slope, "config": cfg.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return {"report": report, "closed_form": rows}


def property_report(spec, params, resolution=None, n_boundary: int = 4000, seed: int = 12345) -> dict:
    """Residual, boundary and first-residual-component RMS on a dense grid.

    Meant for problems without a reference field (Navier-Stokes, where the
    first residual component is the mass balance u_x + v_y). The interior set
    is the evaluation grid; the boundary set is a dense seeded sample.
    """
    interior = eval_grid(spec, resolution or _default_resolution(spec)) * spec.factors
    boundary = sample_boundary(spec, SamplePlan(1, n_boundary, seed=seed))
    diag = field_diagnostics(spec, params, interior, boundary)
    res = [v for k, v in diag.items() if k.startswith("residual_")]
    bc = [v for k, v in diag.items() if not k.startswith("residual_")]
    return {
        "residual_rms": float(np.sqrt(np.sum(np.square(res)))),
        "bc_rms": float(np.sqrt(np.mean(np.square(bc)))),
        "first_residual_rms": res[0],
        "detail": diag,
    }


# --------------------------------------------------------------------------
# autodiff self-check


GRAD_TOL, D1_TOL, D2_TOL = 1e-5, 1e-6, 1e-4
_CHECK_SCALES = {
    "wave1d": (1.0, 2.0, 4.0, 10.0),
    "allen_cahn": (1.0, 10.0, 100.0),
    "boundary_layer": (1.0, 10.0, 1000.0),
    "poisson_sin": (1.0, 2.0, 10.0),
    "poisson_generic": (1.0, 4.0),
    "navier_stokes": (1.0, 2.0, 10.0),
}


@dataclass(frozen=True)
class CheckCase:
    index: int
    problem: str
    N: float
    activation: str
    parameterization: str
    grad_err: float
    d1_err: float
    d2_err: float

    @property
    def passed(self) -> bool:
        return self.grad_err < GRAD_TOL and self.d1_err < D1_TOL and self.d2_err < D2_TOL


def _check_problem(name: str):
    if name == "poisson_generic":
        return make_problem(name, f=lambda x: np.exp(x) * np.cos(3.0 * x))
    return make_problem(name)


def _jet_errors(params, x: np.ndarray, directions) -> tuple[float, float]:
    """Sup-norm jet mismatch against central differences, relative to max(1, sup|d|)."""
    tape = Tape()
    _, jets = forward_jets(bind(tape, params), x, directions)
    e1 = e2 = 0.0
    for k in directions:
        d1, d2 = (v.value for v in jets[k])
        step1 = np.zeros(x.shape[1])
        step1[k] = 1e-5
        fd1 = (evaluate(params, x + step1) - evaluate(params, x - step1)) / 2e-5
        step2 = np.zeros(x.shape[1])
        step2[k] = 1e-4
        fd2 = (evaluate(params, x + step2) - 2 * evaluate(params, x) + evaluate(params, x - step2)) / 1e-8
        e1 = max(e1, float(np.max(np.abs(d1 - fd1))) / max(1.0, float(np.max(np.abs(d1)))))
        e2 = max(e2, float(np.max(np.abs(d2 - fd2))) / max(1.0, float(np.max(np.abs(d2)))))
    return e1, e2


def check_case(index: int, seed: int = 0) -> CheckCase:
    """One seeded case: loss gradient of a random problem/scale/net against finite differences."""
    rng = np.random.default_rng([seed, index])
    order = ("poisson_sin", "wave1d", "allen_cahn", "boundary_layer", "navier_stokes", "poisson_generic")
    name = order[index % len(order)]
    N = float(rng.choice(_CHECK_SCALES[name]))
    spec = scale_problem(_check_problem(name), N)
    smooth_enough = name.startswith("poisson")
    activation = "cubic_relu" if smooth_enough and (index // len(order)) % 2 else "tanh"
    parameterization = str(rng.choice(["standard", "ntk_scaled"]))
    cfg = MlpConfig(spec.input_dim, spec.output_dim, (4, 4), activation, parameterization,
                    "gaussian", 0.5, int(rng.integers(2**31)))
    params = init_params(cfg)
    plan = SamplePlan(4, 6 if spec.input_dim == 1 else 12, seed=int(rng.integers(2**31)))
    interior = sample_interior(spec, plan)
    boundary = sample_boundary(spec, plan)

    def build(tape, leaves):
        net = BoundMlp(cfg, tape, list(leaves[0::2]), list(leaves[1::2]))
        return assemble_loss(spec, net, interior, boundary).total

    grad_err = check_gradient(build, params.arrays(), h=1e-5)
    d1_err, d2_err = _jet_errors(params, interior, spec.directions)
    return CheckCase(index, name, N, activation, parameterization, grad_err, d1_err, d2_err)


def self_check(n_cases: int, seed: int = 0) -> list[CheckCase]:
    return [check_case(i, seed) for i in range(n_cases)]


def check_report(cases: Sequence[CheckCase]) -> str:
    lines = [f"{'case':>4} {'problem':<15} {'N':>7} {'activation':<10} {'param':<10} "
             f"{'grad':>9} {'d1':>9} {'d2':>9}  result"]
    for c in cases:
        lines.append(f"{c.index:>4} {c.problem:<15} {c.N:>7g} {c.activation:<10} {c.parameterization:<10} "
                     f"{c.grad_err:>9.2e} {c.d1_err:>9.2e} {c.d2_err:>9.2e}  {'PASS' if c.passed else 'FAIL'}")
    n_pass = sum(c.passed for c in cases)
    lines.append(f"{n_pass}/{len(cases)} cases within tolerance "
                 f"(gradient {GRAD_TOL:g}, d1 {D1_TOL:g}, d2 {D2_TOL:g})")
    return "\n".join(lines) + "\n"


def run_check(cfg: RunConfig, out: Path | None) -> bool:
    cases = self_check(cfg.check_cases, cfg.seed)
    text = check_report(cases)
    print(text, end="")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "check.txt").write_text(text, encoding="utf-8")
    return all(c.passed for c in cases)


# --------------------------------------------------------------------------
# entry point


def _parse_scales(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in _items(text))
    except ValueError:
        raise ConfigError(f"scales: expected a number or comma list, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vspinn", description="Variable-scaling PINN experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value config file or a run manifest")
    p.add_argument("--preset", help=f"one of: {', '.join(sorted(PRESETS))}")
    p.add_argument("--out", help="output directory (overrides the config's out)")
    p.add_argument("--seed", type=int, help="seed for networks and sampling")
    p.add_argument("--scale", help="N for train; comma list for sweep and ntk")
    return p


def load_run_config(args) -> RunConfig:
    text = ""
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config: no such file {args.config!r}")
        text = path.read_text(encoding="utf-8")
    cfg = parse_config(text, preset=args.preset)
    changes = {}
    if args.out:
        changes["out"] = args.out
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.scale:
        scales = _parse_scales(args.scale)
        if not scales:
            raise ConfigError("scales: empty list")
        if args.command == "train":
            if len(scales) != 1:
                raise ConfigError("N: train takes a single scale factor")
            changes["N"] = scales[0]
        else:
            changes["scales"] = scales
    if changes:
        cfg = replace(cfg, **changes)
        validate(cfg)
    return cfg


def execute(command: str, cfg: RunConfig) -> int:
    out = Path(cfg.out)
    if command == "train":
        m = run_train(cfg, out)
        err = m["final_rel_l2"]
        print(f"trained {cfg.problem} N={cfg.N:g}: final loss {m['final_loss']}, "
              f"relative L2 {'NA' if err is None else f'{err:.4g}'}; wrote {out}")
    elif command == "sweep":
        for m in run_sweep(cfg, out):
            err = m["final_rel_l2"]
            print(f"N={m['N']:g}: final relative L2 {'NA' if err is None else f'{err:.4g}'}")
        print(f"wrote {out / 'comparison.csv'}")
    elif command == "ntk":
        res = run_ntk(cfg, out)
        print(res["report"].to_text(), end="")
    else:
        return EXIT_OK if run_check(cfg, out) else EXIT_INVALID
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args)
        return execute(args.command, cfg)
    except ConfigError as exc:
        print(f"vspinn: invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ArithmeticError as exc:
        print(f"vspinn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"vspinn: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
