"""Multilayer perceptron evaluated on a tape, plainly or as coordinate jets."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .diffcore import Jet2, Tape, Var, cubic_relu_parts, tanh_parts

ACTIVATIONS = ("tanh", "cubic_relu")
PARAMETERIZATIONS = ("standard", "ntk_scaled")
INITS = ("glorot", "gaussian")
CHECKPOINT_MAGIC = "vspinn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...]
    activation: str = "tanh"
    parameterization: str = "standard"
    init: str = "glorot"
    init_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden must be a non-empty list of widths >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if not self.init_std > 0:
            raise ValueError("init_std must be positive")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)


@dataclass
class MlpParams:
    config: MlpConfig
    weights: list[np.ndarray]  # layer l: (fan_in, fan_out)
    biases: list[np.ndarray]  # layer l: (fan_out,)

    def __post_init__(self):
        widths = self.config.widths
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ValueError("layer count does not match config")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[l], widths[l + 1]) or b.shape != (widths[l + 1],):
                raise ValueError(f"layer {l} has shapes {w.shape}, {b.shape}")

    def arrays(self) -> list[np.ndarray]:
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, config: MlpConfig, arrays: Sequence[np.ndarray]) -> MlpParams:
        return cls(config, [np.asarray(a) for a in arrays[0::2]], [np.asarray(a) for a in arrays[1::2]])

    def copy(self) -> MlpParams:
        return MlpParams.from_arrays(self.config, [a.copy() for a in self.arrays()])

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())


def init_params(config: MlpConfig) -> MlpParams:
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    widths = config.widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        if config.init == "glorot":
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        else:
            weights.append(rng.normal(0.0, config.init_std, size=(fan_in, fan_out)))
            biases.append(rng.normal(0.0, config.init_std, size=fan_out))
    return MlpParams(config, weights, biases)


@dataclass
class BoundMlp:
    """Parameters lifted onto a tape as leaves."""

    config: MlpConfig
    tape: Tape
    weights: list[Var]
    biases: list[Var]

    def leaves(self) -> list[Var]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def grads(self, grad_map: dict[int, np.ndarray]) -> list[np.ndarray]:
        """Gradient arrays in the order of MlpParams.arrays()."""
        return [grad_map[v.id] for v in self.leaves()]


def bind(tape: Tape, params: MlpParams) -> BoundMlp:
    ws = [tape.param(w) for w in params.weights]
    bs = [tape.param(b) for b in params.biases]
    return BoundMlp(params.config, tape, ws, bs)


def _scale(config: MlpConfig, layer: int) -> float | None:
    if config.parameterization == "ntk_scaled":
        return 1.0 / math.sqrt(config.widths[layer])
    return None


def _activation(config: MlpConfig, z: Var) -> tuple[Var, Var, Var]:
    if config.activation == "tanh":
        return tanh_parts(z)
    return cubic_relu_parts(z)


def _check_input(config: MlpConfig, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ValueError(f"expected inputs of shape (B, {config.input_dim}), got {x.shape}")
    return x


def forward(net: BoundMlp, x) -> Var:
    """Network outputs on the tape, shape (B, output_dim)."""
    value, _ = forward_jets(net, x, ())
    return value


def forward_jets(net: BoundMlp, x, directions: Sequence[int]) -> tuple[Var, dict[int, tuple[Var, Var]]]:
    """Outputs plus first/second derivatives along each requested coordinate.

    The value path is shared by all directions. Returns ``(value, {k: (d1, d2)})``
    with every array of shape (B, output_dim).
    """
    cfg = net.config
    tape = net.tape
    if isinstance(x, Var):
        h = x
        _check_input(cfg, x.value)
    else:
        h = tape.const(_check_input(cfg, x))
    batch = h.value.shape[0]
    for k in directions:
        if not 0 <= k < cfg.input_dim:
            raise ValueError(f"direction {k} out of range for input_dim {cfg.input_dim}")
    jets: dict[int, list] = {}
    for k in directions:
        e = np.zeros((batch, cfg.input_dim))
        e[:, k] = 1.0
        jets[k] = [tape.const(e), None]  # second derivative of an input is zero

    n_layers = len(net.weights)
    for l in range(n_layers):
        w, b = net.weights[l], net.biases[l]
        c = _scale(cfg, l)
        z = h @ w
        if c is not None:
            z = z * c
        z = z + b
        for k, (d1, d2) in jets.items():
            z1 = d1 @ w
            z2 = None if d2 is None else d2 @ w
            if c is not None:
                z1 = z1 * c
                z2 = None if z2 is None else z2 * c
            jets[k] = [z1, z2]
        if l == n_layers - 1:
            h = z
            break
        h, fp, fpp = _activation(cfg, z)
        for k, (z1, z2) in jets.items():
            a2 = fpp * (z1 * z1)
            if z2 is not None:
                a2 = a2 + fp * z2
            jets[k] = [fp * z1, a2]
    out = {}
    for k, (d1, d2) in jets.items():
        if d2 is None:  # network with no hidden activation path cannot happen, kept for safety
            d2 = tape.const(np.zeros_like(d1.value))
        out[k] = (d1, d2)
    return h, out


def forward_jet(net: BoundMlp, x, direction: int) -> list[Jet2]:
    """One Jet2 per output, each component of shape (B,)."""
    value, jets = forward_jets(net, x, (direction,))
    d1, d2 = jets[direction]
    return [Jet2(value.col(j), d1.col(j), d2.col(j)) for j in range(net.config.output_dim)]


def evaluate(params: MlpParams, x) -> np.ndarray:
    """Tape-free forward pass; bit-identical to :func:`forward`."""
    cfg = params.config
    h = _check_input(cfg, x)
    n_layers = len(params.weights)
    for l in range(n_layers):
        c = _scale(cfg, l)
        z = h @ params.weights[l]
        if c is not None:
            z = z * c
        z = z + params.biases[l]
        if l == n_layers - 1:
            return z
        if cfg.activation == "tanh":
            h = np.tanh(z)
        else:
            r = np.maximum(z, 0.0)
            h = (r * r) * r
    return h


# --------------------------------------------------------------------------
# checkpoint files
#
#   vspinn-checkpoint <version>
#   config <json>
#   W <layer> <rows> <cols>      followed by <rows> lines of <cols> values
#   b <layer> <n>                followed by one line of <n> values
#
# values are written with 17 significant digits, which round-trips float64.


def _fmt(row: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in row)


def save_checkpoint(params: MlpParams, path) -> None:
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", "config " + json.dumps(asdict(params.config))]
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"W {l} {w.shape[0]} {w.shape[1]}")
        lines += [_fmt(r) for r in w]
        lines.append(f"b {l} {b.shape[0]}")
        lines.append(_fmt(b))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> MlpParams:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split()
    if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a vspinn checkpoint")
    if int(head[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {head[1]}")
    if not lines[1].startswith("config "):
        raise ValueError(f"{path}: missing config line")
    cfg = json.loads(lines[1][len("config "):])
    config = MlpConfig(**cfg)
    weights, biases = [], []
    i = 2
    while i < len(lines) and lines[i].strip():
        tag = lines[i].split()
        if tag[0] == "W":
            rows, cols = int(tag[2]), int(tag[3])
            w = np.array([[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]).reshape(rows, cols)
            weights.append(w)
            i += rows + 1
        elif tag[0] == "b":
            n = int(tag[2])
            biases.append(np.array([float(v) for v in lines[i + 1].split()]).reshape(n))
            i += 2
        else:
            raise ValueError(f"{path}: unexpected line {lines[i]!r}")
    return MlpParams(config, weights, biases)
