"""Network plumbing: MLP specs, Glorot init, optimizers, weight clipping.

Every hidden layer is affine -> batch norm -> activation; output layers are
affine only (batch norm on an output layer would re-center the produced
distribution parameters, so the flag covers hidden layers).  The critic keeps
batch norm too, deliberately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Node, BN_EPS
from .errors import ConfigError, DomainError, NumericalError

ACTIVATIONS = ("relu", "leaky_relu", "linear")
FINAL_TRANSFORMS = ("none", "unit_normalize", "split4")
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class MlpSpec:
    """Fully-connected network layout.

    widths are output channels per layer; activations must match widths
    one-to-one ("linear" for no nonlinearity).  final_transform post-processes
    the last layer: "unit_normalize" rescales each output row to unit length,
    "split4" returns four equal column blocks.
    """

    in_dim: int
    widths: tuple[int, ...]
    activations: tuple[str, ...]
    batch_norm: bool = True
    final_transform: str = "none"

    def __post_init__(self):
        if self.in_dim <= 0 or len(self.widths) < 1 or any(w <= 0 for w in self.widths):
            raise ConfigError("MlpSpec needs a positive input dim and >= 1 positive width")
        if len(self.activations) != len(self.widths):
            raise ConfigError("MlpSpec needs one activation per layer")
        if any(a not in ACTIVATIONS for a in self.activations):
            raise ConfigError(f"activations must be among {ACTIVATIONS}")
        if self.final_transform not in FINAL_TRANSFORMS:
            raise ConfigError(f"final_transform must be among {FINAL_TRANSFORMS}")
        if self.final_transform == "split4" and self.widths[-1] % 4 != 0:
            raise ConfigError("split4 needs an output width divisible by 4")


def mlp(in_dim, widths, activation, final_transform="none", batch_norm=True) -> MlpSpec:
    """Spec with one hidden activation and a linear output layer."""
    acts = tuple(activation for _ in widths[:-1]) + ("linear",)
    return MlpSpec(in_dim, tuple(widths), acts, batch_norm, final_transform)


class ParamStore:
    """Named parameter arrays plus non-trainable state (batch-norm stats)."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray):
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name}")
        self.params[name] = np.asarray(value, dtype=np.float64)

    def add_state(self, name: str, value: np.ndarray):
        if name in self.state:
            raise ConfigError(f"duplicate state entry {name}")
        self.state[name] = np.asarray(value, dtype=np.float64)

    def names(self, prefix: str) -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def copy(self) -> "ParamStore":
        other = ParamStore()
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.state = {k: v.copy() for k, v in self.state.items()}
        return other


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform on [-L, L] with L = sqrt(6 / (rows + cols))."""
    if rows <= 0 or cols <= 0:
        raise DomainError("glorot_init needs positive dimensions")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def build_mlp_params(store: ParamStore, prefix: str, spec: MlpSpec, rng: np.random.Generator):
    """Glorot weights, zero biases, unit/zero batch-norm parameters."""
    fan_in = spec.in_dim
    for k, width in enumerate(spec.widths):
        store.add(f"{prefix}.l{k}.W", glorot_init(fan_in, width, rng))
        store.add(f"{prefix}.l{k}.b", np.zeros(width))
        if spec.batch_norm and k < len(spec.widths) - 1:
            store.add(f"{prefix}.l{k}.gamma", np.ones(width))
            store.add(f"{prefix}.l{k}.beta", np.zeros(width))
            store.add_state(f"{prefix}.l{k}.running_mean", np.zeros(width))
            store.add_state(f"{prefix}.l{k}.running_var", np.ones(width))
        fan_in = width


def _bind(tape: Tape, store: ParamStore, name: str) -> Node:
    if name in tape.params:
        return tape.params[name]
    return tape.param(store.params[name], name)


def mlp_forward(tape: Tape, store: ParamStore, prefix: str, spec: MlpSpec, x, train: bool):
    """Run the MLP on the tape; returns a node or a 4-tuple for split4."""
    h = tape._as_node(x)
    nlayers = len(spec.widths)
    for k in range(nlayers):
        w = _bind(tape, store, f"{prefix}.l{k}.W")
        b = _bind(tape, store, f"{prefix}.l{k}.b")
        h = tape.affine(h, w, b)
        if spec.batch_norm and k < nlayers - 1:
            h = tape.batch_norm(
                h,
                _bind(tape, store, f"{prefix}.l{k}.gamma"),
                _bind(tape, store, f"{prefix}.l{k}.beta"),
                store.state[f"{prefix}.l{k}.running_mean"],
                store.state[f"{prefix}.l{k}.running_var"],
                train,
            )
        act = spec.activations[k]
        if act == "relu":
            h = tape.relu(h)
        elif act == "leaky_relu":
            h = tape.leaky_relu(h, LEAKY_SLOPE)
    if spec.final_transform == "unit_normalize":
        return tape.normalize_rows(h) if h.value.ndim == 2 else tape.unit_normalize(h)
    if spec.final_transform == "split4":
        quarter = spec.widths[-1] // 4
        return tuple(
            tape.col_block(h, i * quarter, (i + 1) * quarter) for i in range(4)
        )
    return h


def mlp_apply(store: ParamStore, prefix: str, spec: MlpSpec, x: np.ndarray):
    """Evaluation-mode forward pass in plain numpy (running statistics)."""
    h = np.asarray(x, dtype=np.float64)
    nlayers = len(spec.widths)
    for k in range(nlayers):
        h = h @ store.params[f"{prefix}.l{k}.W"] + store.params[f"{prefix}.l{k}.b"]
        if spec.batch_norm and k < nlayers - 1:
            mean = store.state[f"{prefix}.l{k}.running_mean"]
            var = store.state[f"{prefix}.l{k}.running_var"]
            h = (h - mean) / np.sqrt(var + BN_EPS)
            h = store.params[f"{prefix}.l{k}.gamma"] * h + store.params[f"{prefix}.l{k}.beta"]
        act = spec.activations[k]
        if act == "relu":
            h = np.maximum(h, 0.0)
        elif act == "leaky_relu":
            h = np.where(h > 0.0, h, LEAKY_SLOPE * h)
    if spec.final_transform == "unit_normalize":
        norms = np.linalg.norm(h, axis=-1, keepdims=True)
        h = np.where(norms > 0.0, h / np.where(norms > 0.0, norms, 1.0), 0.0)
    elif spec.final_transform == "split4":
        quarter = spec.widths[-1] // 4
        return tuple(h[..., i * quarter:(i + 1) * quarter] for i in range(4))
    return h


# ----------------------------------------------------------------- optimizers


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str  # "adam" | "rmsprop"
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "rmsprop"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning rate must be positive")


def adam_step(params, grads, slots, cfg: OptimizerConfig):
    """One bias-corrected Adam update over a dict of named tensors."""
    slots["step"] = int(slots["step"]) + 1
    t = slots["step"]
    for name, theta in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name}")
        m = slots["m"][name] = cfg.beta1 * slots["m"][name] + (1.0 - cfg.beta1) * g
        v = slots["v"][name] = cfg.beta2 * slots["v"][name] + (1.0 - cfg.beta2) * g * g
        mhat = m / (1.0 - cfg.beta1**t)
        vhat = v / (1.0 - cfg.beta2**t)
        params[name] = theta - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
    return params


def rmsprop_step(params, grads, slots, cfg: OptimizerConfig):
    """v <- rho v + (1 - rho) g^2; theta <- theta - lr g / (sqrt(v) + eps)."""
    slots["step"] = int(slots["step"]) + 1
    for name, theta in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name}")
        v = slots["v"][name] = cfg.rho * slots["v"][name] + (1.0 - cfg.rho) * g * g
        params[name] = theta - cfg.learning_rate * g / (np.sqrt(v) + cfg.eps)
    return params


class Optimizer:
    """Optimizer state bound to a fixed set of parameter names."""

    def __init__(self, cfg: OptimizerConfig, names: list[str], store: ParamStore):
        self.cfg = cfg
        self.names = list(names)
        for name in self.names:
            if name not in store.params:
                raise ConfigError(f"optimizer refers to unknown parameter {name}")
        self.slots = {
            "step": 0,
            "m": {n: np.zeros_like(store.params[n]) for n in self.names},
            "v": {n: np.zeros_like(store.params[n]) for n in self.names},
        }

    def step(self, store: ParamStore, grads: dict[str, np.ndarray]):
        params = {n: store.params[n] for n in self.names}
        sub = {n: grads[n] for n in self.names}
        if self.cfg.kind == "adam":
            adam_step(params, sub, self.slots, self.cfg)
        else:
            rmsprop_step(params, sub, self.slots, self.cfg)
        for n in self.names:
            store.params[n] = params[n]


def clip_weights(store: ParamStore, names: list[str], lo: float = -1.0, hi: float = 1.0):
    """Elementwise clamp of the named parameters (the critic's, in training)."""
    if lo >= hi:
        raise DomainError("clip_weights needs lo < hi")
    for name in names:
        np.clip(store.params[name], lo, hi, out=store.params[name])
