"""Small numpy MLP stack with hand-written reverse mode.

Parameters carry a leading *member* axis so an ensemble of identically shaped
networks runs as one batched matmul: weights are ``(E, in, out)`` and biases
``(E, 1, out)``. A single network is simply ``E = 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .physics import DomainError

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

CHECKPOINT_FORMAT = "uavmec-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise DomainError(f"invalid layer sizes in {self}")

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]


class ParamSet:
    """Per-layer weights and biases for ``members`` networks of one shape.

    All arrays are views into one contiguous ``flat`` buffer so optimizer and
    target-tracking updates run as single vector operations.
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases):
            raise DomainError("weights and biases must pair up")
        for w, b in zip(weights, biases):
            if w.ndim != 3 or b.shape != (w.shape[0], 1, w.shape[2]):
                raise DomainError(f"inconsistent layer shapes {w.shape} / {b.shape}")
        dtype = np.result_type(*weights, *biases)
        parts = []
        for w, b in zip(weights, biases):
            parts += [w, b]
        self.flat = np.concatenate([np.asarray(a, dtype=dtype).ravel() for a in parts])
        self.weights, self.biases = [], []
        offset = 0
        for i, a in enumerate(parts):
            view = self.flat[offset : offset + a.size].reshape(a.shape)
            offset += a.size
            (self.weights if i % 2 == 0 else self.biases).append(view)
        self.version = 0

    @property
    def members(self) -> int:
        return self.weights[0].shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.flat.dtype

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[2]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> ParamSet:
        return ParamSet(self.weights, self.biases)

    def take(self, members: Sequence[int]) -> ParamSet:
        idx = np.asarray(members, dtype=int)
        return ParamSet([w[idx] for w in self.weights], [b[idx] for b in self.biases])

    def touch(self) -> None:
        self.version += 1

    def shapes(self) -> list[tuple[int, ...]]:
        return [a.shape for a in self.arrays()]


def flatten(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays])


def init_params(
    spec: MlpSpec, rng: np.random.Generator, members: int = 1, dtype=np.float64
) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    sizes = spec.sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(members, fan_in, fan_out)).astype(dtype))
        biases.append(rng.uniform(-bound, bound, size=(members, 1, fan_out)).astype(dtype))
    return ParamSet(weights, biases)


@dataclass
class Cache:
    params_id: int
    version: int
    # inputs[i] feeds layer i; for i > 0 it is the ReLU output of layer i - 1
    inputs: list[np.ndarray]
    shared_input: bool


def forward(params: ParamSet, x: np.ndarray) -> tuple[np.ndarray, Cache]:
    """Evaluate every member on ``x``.

    ``x`` is ``(B, in)`` (shared by all members) or ``(E, B, in)``. Hidden
    layers use ReLU, the output layer is linear. Returns ``(E, B, out)``.
    """
    x = np.asarray(x, dtype=params.dtype)
    shared = x.ndim == 2
    if x.shape[-1] != params.input_dim or x.ndim not in (2, 3):
        raise DomainError(f"input shape {x.shape} does not match input_dim {params.input_dim}")
    if not shared and x.shape[0] != params.members:
        raise DomainError("per-member input needs one slice per member")
    inputs = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        # a 2-D input broadcasts across members
        z = np.matmul(h, w)
        z += b
        if i != last:
            np.maximum(z, 0.0, out=z)
        h = z
    return h, Cache(id(params), params.version, inputs, shared)


def backward(
    params: ParamSet,
    cache: Cache,
    grad_out: np.ndarray,
    param_grads: bool = True,
    input_grad: bool = True,
) -> tuple[list[np.ndarray] | None, np.ndarray | None]:
    """Reverse pass for :func:`forward`.

    Returns ``(grads, grad_in)``; ``grads`` follows ``params.arrays()`` order
    (``None`` when ``param_grads`` is false) and ``grad_in`` is ``(E, B, in)``
    (``None`` when ``input_grad`` is false).
    """
    if cache.params_id != id(params) or cache.version != params.version:
        raise DomainError("stale cache: parameters changed since the forward pass")
    g = np.asarray(grad_out, dtype=params.dtype)
    n = len(params.weights)
    grads: list[np.ndarray] = [None] * (2 * n)  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        h = cache.inputs[i]
        if param_grads:
            grads[2 * i] = np.matmul(h.swapaxes(-1, -2), g)
            grads[2 * i + 1] = g.sum(axis=1, keepdims=True)
        if i == 0:
            if not input_grad:
                return grads, None
            g = np.matmul(g, params.weights[i].transpose(0, 2, 1))
            break
        g = np.matmul(g, params.weights[i].transpose(0, 2, 1))
        # ReLU gate: the stored activation is positive exactly where the pre-activation was
        g *= h > 0
    return (grads if param_grads else None), g


@dataclass
class SquashedSample:
    action: np.ndarray
    log_prob: np.ndarray
    noise: np.ndarray
    pre_tanh: np.ndarray
    std: np.ndarray
    clipped: np.ndarray


def _log1m_tanh2(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2), stable for large |u|
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def policy_sample(
    mean: np.ndarray,
    log_std: np.ndarray,
    rng: np.random.Generator | None = None,
    deterministic: bool = False,
) -> SquashedSample:
    """Draw ``tanh(mean + std * z)`` and its log-density in action space."""
    raw_log_std = np.asarray(log_std)
    clipped = (raw_log_std < LOG_STD_MIN) | (raw_log_std > LOG_STD_MAX)
    log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    if deterministic:
        z = np.zeros_like(mean)
    else:
        if rng is None:
            raise DomainError("stochastic sampling needs an rng")
        z = rng.standard_normal(mean.shape).astype(mean.dtype, copy=False)
    u = mean + std * z
    log_prob = np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI - _log1m_tanh2(u), axis=-1)
    eps = np.finfo(mean.dtype).eps
    action = np.clip(np.tanh(u), -1.0 + eps, 1.0 - eps)
    return SquashedSample(action, log_prob, z, u, std, clipped)


def squashed_grads(
    sample: SquashedSample, grad_action: np.ndarray, grad_log_prob: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Pull gradients on (action, log_prob) back to (mean, log_std) with the noise held fixed."""
    t = np.tanh(sample.pre_tanh)
    dt = 1.0 - t * t
    glp = np.asarray(grad_log_prob)[..., None]
    g_u = grad_action * dt + glp * 2.0 * t
    g_mean = g_u
    g_log_std = g_u * sample.std * sample.noise - glp
    g_log_std = np.where(sample.clipped, 0.0, g_log_std)
    return g_mean, g_log_std


class Adam:
    """Bias-corrected Adam over a fixed list of arrays."""

    def __init__(self, arrays: Sequence[np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self._scratch = [np.zeros_like(a) for a in arrays]
        self._mask = [np.zeros(a.shape, dtype=bool) for a in arrays]
        self.t = 0
        self.skipped = 0

    def step(self, arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> bool:
        """Update ``arrays`` in place; a non-finite gradient skips the step and returns False."""
        if len(arrays) != len(self.m):
            raise DomainError("gradient list does not match optimizer state")
        for a, g in zip(arrays, grads):
            if a.shape != g.shape:
                raise DomainError(f"gradient shape {g.shape} != parameter shape {a.shape}")
            if not np.all(np.isfinite(g)):
                self.skipped += 1
                return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        step = self.lr * math.sqrt(c2) / c1
        eps = self.eps * math.sqrt(c2)
        for a, g, m, v, buf, mask in zip(arrays, grads, self.m, self.v, self._scratch, self._mask):
            m *= b1
            np.multiply(g, 1.0 - b1, out=buf)
            m += buf
            v *= b2
            np.multiply(g, g, out=buf)
            buf *= 1.0 - b2
            v += buf
            _flush_subnormal(m, buf, mask)
            _flush_subnormal(v, buf, mask)
            np.sqrt(v, out=buf)
            buf += eps
            np.divide(m, buf, out=buf)
            buf *= step
            a -= buf
        return True


def _flush_subnormal(x: np.ndarray, buf: np.ndarray, mask: np.ndarray) -> None:
    """Zero entries below the smallest normal float.

    Moments of parameters that stop receiving gradient decay geometrically into
    the subnormal range, where arithmetic is an order of magnitude slower.
    """
    np.abs(x, out=buf)
    np.less(buf, np.finfo(x.dtype).tiny, out=mask)
    np.copyto(x, 0, where=mask)


def adam_step(opt: Adam, params: ParamSet, grads: Sequence[np.ndarray]) -> bool:
    """Adam update of ``params``; ``opt`` must have been built on ``[params.flat]``."""
    ok = opt.step([params.flat], [flatten(grads).astype(params.dtype, copy=False)])
    if ok:
        params.touch()
    return ok


def soft_update(target: ParamSet, online: ParamSet, tau: float) -> ParamSet:
    """target <- tau * target + (1 - tau) * online, in place."""
    if not 0.0 <= tau <= 1.0:
        raise DomainError("tau must lie in [0, 1]")
    if target.shapes() != online.shapes():
        raise DomainError("target and online parameters differ in shape")
    target.flat *= tau
    target.flat += (1.0 - tau) * online.flat
    target.touch()
    return target


def finite_difference_grads(
    loss: Callable[[], float], arrays: Sequence[np.ndarray], h: float = 1e-5
) -> list[np.ndarray]:
    """Central differences of ``loss()`` with respect to every entry of ``arrays``."""
    out = []
    for a in arrays:
        g = np.zeros_like(a, dtype=np.float64)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            up = loss()
            flat[j] = keep - h
            down = loss()
            flat[j] = keep
            gflat[j] = (up - down) / (2.0 * h)
        out.append(g)
    return out


def save_checkpoint(path: str | Path, networks: dict[str, ParamSet], meta: dict) -> None:
    """Write parameter sets to ``.npz`` with a JSON header describing them."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "networks": {name: [list(s) for s in p.shapes()] for name, p in networks.items()},
    }
    payload = {"header": np.array(json.dumps(header, sort_keys=True))}
    for name, p in networks.items():
        for i, a in enumerate(p.arrays()):
            payload[f"{name}/{i}"] = a
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str | Path) -> tuple[dict[str, ParamSet], dict]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise DomainError(f"{path} is not a checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise DomainError(f"unsupported checkpoint version {header.get('version')}")
        nets = {}
        for name, shapes in header["networks"].items():
            arrays = [data[f"{name}/{i}"].copy() for i in range(len(shapes))]
            nets[name] = ParamSet(arrays[0::2], arrays[1::2])
    return nets, header["meta"]
