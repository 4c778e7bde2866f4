"""Minimal float64 numeric core: feedforward nets with exact reverse-mode
gradients, Adam, soft target updates, seeded RNG streams and checkpoints."""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RELU = "relu"
LINEAR = "linear"
TANH = "tanh"

XAVIER_NORMAL = "xavier_normal"
UNIFORM_SMALL = "uniform_small"

_HIDDEN_ACTIVATIONS = (RELU,)
_OUTPUT_ACTIVATIONS = (LINEAR, TANH)

CHECKPOINT_MAGIC = b"MLPK"


class ShapeError(ValueError):
    """Array dimensions disagree with a network or store layout."""


class NonFiniteError(FloatingPointError):
    """A loss or gradient contained NaN/inf; the update was not applied."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)
    hidden_activation: str = RELU
    output_activation: str = LINEAR

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer dimensions must be >= 1, got {dims}")
        if self.hidden_activation not in _HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in _OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def param_count(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_shapes)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_dims": list(self.hidden_dims),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            input_dim=d["input_dim"],
            output_dim=d["output_dim"],
            hidden_dims=tuple(d["hidden_dims"]),
            hidden_activation=d["hidden_activation"],
            output_activation=d["output_activation"],
        )


class ParamStore:
    """Flat float64 parameter vector with per-layer (weights, bias) views.

    Weights are stored (fan_in, fan_out) so a batch ``x`` of shape
    (B, fan_in) maps to ``x @ W + b``. The views alias ``flat``: every
    update must write into ``flat`` in place, never rebind it.
    """

    def __init__(self, spec: MlpSpec, flat: np.ndarray | None = None):
        self.spec = spec
        if flat is None:
            flat = np.zeros(spec.param_count)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (spec.param_count,):
            raise ShapeError(f"expected {spec.param_count} parameters, got shape {flat.shape}")
        self.flat = flat
        self.layers: list[tuple[np.ndarray, np.ndarray]] = []
        offset = 0
        for fan_in, fan_out in spec.layer_shapes:
            w = flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = flat[offset:offset + fan_out]
            offset += fan_out
            self.layers.append((w, b))

    @property
    def total_count(self) -> int:
        return int(self.flat.size)

    def copy(self) -> "ParamStore":
        return ParamStore(self.spec, self.flat.copy())

    def assign(self, other: "ParamStore") -> None:
        _check_congruent(self, other)
        self.flat[:] = other.flat

    def forward(self, x) -> np.ndarray:
        return mlp_forward(self, x)

    def backward(self, x, output_grad) -> "MlpGradients":
        return mlp_backward(self, x, output_grad)


@dataclass
class MlpGradients:
    param_grads: np.ndarray
    input_grads: np.ndarray


def _check_congruent(a: ParamStore, b: ParamStore) -> None:
    if a.spec != b.spec:
        raise ShapeError(f"parameter stores differ: {a.spec} vs {b.spec}")


def mlp_init(spec: MlpSpec, rng: np.random.Generator,
             output_layer_mode: str = XAVIER_NORMAL) -> ParamStore:
    """Xavier-normal weights and zero biases; optionally U(-0.01, 0.01) output layer."""
    if output_layer_mode not in (XAVIER_NORMAL, UNIFORM_SMALL):
        raise ValueError(f"unknown output layer mode {output_layer_mode!r}")
    params = ParamStore(spec)
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        fan_in, fan_out = w.shape
        if k == last and output_layer_mode == UNIFORM_SMALL:
            w[...] = rng.uniform(-0.01, 0.01, size=w.shape)
            b[...] = rng.uniform(-0.01, 0.01, size=b.shape)
        else:
            std = np.sqrt(2.0 / (fan_in + fan_out))
            w[...] = rng.normal(0.0, std, size=w.shape)
            b[...] = 0.0
    return params


def _as_batch(params: ParamStore, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ShapeError(f"input shape {x.shape} does not match input_dim {params.spec.input_dim}")
    return x, single


def _forward_trace(params: ParamStore, x: np.ndarray) -> list[np.ndarray]:
    # activations[0] is the input, activations[-1] the network output
    activations = [x]
    h = x
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        z = h @ w + b
        if k < last:
            h = np.maximum(z, 0.0)
        elif params.spec.output_activation == TANH:
            h = np.tanh(z)
        else:
            h = z
        activations.append(h)
    return activations


def mlp_forward(params: ParamStore, x) -> np.ndarray:
    """Evaluate the network on one input vector or a (B, input_dim) batch."""
    batch, single = _as_batch(params, x)
    out = _forward_trace(params, batch)[-1]
    return out[0] if single else out


def mlp_trace(params: ParamStore, x) -> list[np.ndarray]:
    """All layer activations for a batch; pass to ``mlp_backward`` to skip a re-run."""
    batch, _ = _as_batch(params, x)
    return _forward_trace(params, batch)


def mlp_backward(params: ParamStore, x, output_grad,
                 activations: list[np.ndarray] | None = None) -> MlpGradients:
    """Gradients of ``sum(output * output_grad)`` w.r.t. parameters and input.

    Batched inputs accumulate parameter gradients over the batch and return
    per-row input gradients. The ReLU derivative at exactly 0 is taken as 0.
    """
    batch, single = _as_batch(params, x)
    g = np.asarray(output_grad, dtype=np.float64)
    if single:
        g = g[None, :] if g.ndim == 1 else g
    if g.shape != (batch.shape[0], params.spec.output_dim):
        raise ShapeError(f"output_grad shape {np.shape(output_grad)} does not match output_dim "
                         f"{params.spec.output_dim} for batch {batch.shape[0]}")
    acts = activations if activations is not None else _forward_trace(params, batch)
    grads = np.empty_like(params.flat)
    grad_views = ParamStore(params.spec, grads).layers
    last = len(params.layers) - 1
    if params.spec.output_activation == TANH:
        g = g * (1.0 - acts[-1] ** 2)
    for k in range(last, -1, -1):
        w, _ = params.layers[k]
        gw, gb = grad_views[k]
        np.matmul(acts[k].T, g, out=gw)
        gb[...] = g.sum(axis=0)
        g = g @ w.T
        if k > 0:
            g = g * (acts[k] > 0.0)
    return MlpGradients(param_grads=grads, input_grads=g[0] if single else g)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamStore, learning_rate: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        n = params.total_count
        return cls(np.zeros(n), np.zeros(n), 0, learning_rate, beta1, beta2, epsilon)


def adam_step(state: AdamState, params: ParamStore, grads: np.ndarray,
              maximize: bool = False) -> None:
    """Bias-corrected Adam update applied in place to ``state`` and ``params``."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.flat.shape or state.first_moment.shape != params.flat.shape:
        raise ShapeError(f"gradient shape {grads.shape} vs parameters {params.flat.shape}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("non-finite gradient passed to adam_step")
    if maximize:
        grads = -grads
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * grads
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * (grads * grads)
    m_hat = state.first_moment / (1.0 - state.beta1 ** t)
    v_hat = state.second_moment / (1.0 - state.beta2 ** t)
    params.flat -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def soft_update(target: ParamStore, main: ParamStore, tau: float) -> ParamStore:
    """target <- tau * main + (1 - tau) * target, in place; returns target."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    _check_congruent(target, main)
    if tau == 1.0:
        target.flat[:] = main.flat
    elif tau > 0.0:
        target.flat[:] = tau * main.flat + (1.0 - tau) * target.flat
    return target


@dataclass
class GradCheckReport:
    max_rel_err_params: float
    max_rel_err_input: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.max_rel_err_params <= self.tol and self.max_rel_err_input <= self.tol)


def _rel_err(a: np.ndarray, b: np.ndarray, atol: float) -> float:
    # entries smaller than atol in both are compared on an absolute scale
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), atol)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def finite_diff_check(params: ParamStore, x, tol: float = 1e-4, h: float = 1e-5,
                      output_grad=None, backward=mlp_backward,
                      atol: float = 1e-6) -> GradCheckReport:
    """Compare ``backward`` against central differences of ``output . output_grad``.

    Relative error per entry is |analytic - numeric| / max(|analytic|, |numeric|, atol).
    """
    x = np.asarray(x, dtype=np.float64)
    if output_grad is None:
        output_grad = np.ones(params.spec.output_dim)
    output_grad = np.asarray(output_grad, dtype=np.float64)

    def objective(p: ParamStore, inp: np.ndarray) -> float:
        return float(mlp_forward(p, inp) @ output_grad)

    analytic = backward(params, x, output_grad)
    probe = params.copy()
    num_params = np.empty(probe.total_count)
    for i in range(probe.total_count):
        orig = probe.flat[i]
        probe.flat[i] = orig + h
        plus = objective(probe, x)
        probe.flat[i] = orig - h
        minus = objective(probe, x)
        probe.flat[i] = orig
        num_params[i] = (plus - minus) / (2.0 * h)
    num_input = np.empty_like(x)
    xp = x.copy()
    for j in range(x.size):
        orig = xp[j]
        xp[j] = orig + h
        plus = objective(params, xp)
        xp[j] = orig - h
        minus = objective(params, xp)
        xp[j] = orig
        num_input[j] = (plus - minus) / (2.0 * h)
    return GradCheckReport(
        max_rel_err_params=_rel_err(np.asarray(analytic.param_grads), num_params, atol),
        max_rel_err_input=_rel_err(np.asarray(analytic.input_grads), num_input, atol),
        tol=tol,
    )


def gradcheck_suite(n_networks: int = 20, seed: int = 0, tol: float = 1e-4,
                    input_dims: tuple[int, int] = (10, 160)) -> dict:
    """Finite-difference check of random 2x64 networks with random biases."""
    rng = seeded_rng(seed, "gradcheck")
    worst_p = worst_x = 0.0
    failures = 0
    for k in range(n_networks):
        in_dim = int(rng.integers(input_dims[0], input_dims[1] + 1))
        out_act = TANH if k % 2 else LINEAR
        spec = MlpSpec(in_dim, 1 + k % 3, (64, 64), output_activation=out_act)
        params = mlp_init(spec, rng)
        for _, b in params.layers:
            b[...] = rng.normal(0.0, 0.1, size=b.shape)
        x = rng.normal(size=in_dim)
        og = rng.normal(size=spec.output_dim)
        report = finite_diff_check(params, x, tol=tol, output_grad=og)
        worst_p = max(worst_p, report.max_rel_err_params)
        worst_x = max(worst_x, report.max_rel_err_input)
        failures += not report.passed
    return {
        "networks": n_networks,
        "tol": tol,
        "max_rel_err_params": worst_p,
        "max_rel_err_input": worst_x,
        "failures": failures,
        "pass": failures == 0,
    }


# --- seeded random streams ---------------------------------------------------

def _stream_key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def seeded_rng(seed: int, *stream) -> np.random.Generator:
    """Philox-backed generator for a named sub-stream of ``seed``.

    Streams are derived with ``SeedSequence(seed, spawn_key=...)`` so that,
    for example, ``seeded_rng(7, "env")`` and ``seeded_rng(7, "noise")`` never
    perturb each other. Philox is counter-based and its output is identical
    across platforms for a given numpy major version.
    """
    key = tuple(_stream_key(p) for p in stream)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


# --- checkpoints ---------------------------------------------------------------

def save_params(path, params: ParamStore, meta: dict | None = None) -> None:
    """Write ``MLPK`` + uint32 LE header length + JSON header + float64 LE data."""
    header = {"spec": params.spec.to_dict(), "count": params.total_count, "dtype": "<f8"}
    if meta:
        header["meta"] = meta
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.flat.astype("<f8").tobytes())


def load_params(path) -> tuple[ParamStore, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint")
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + n].decode("utf-8"))
    spec = MlpSpec.from_dict(header["spec"])
    flat = np.frombuffer(raw[8 + n:], dtype="<f8").astype(np.float64)
    if flat.size != header["count"]:
        raise ShapeError(f"{path}: header says {header['count']} parameters, found {flat.size}")
    return ParamStore(spec, flat), header
