"""Two-layer perceptrons with hand-written backward passes.

Everything here works on row batches: an input of shape ``(n, in_dim)``
produces an output of shape ``(n, out_dim)`` (or ``(n,)`` for the
scalar-sigmoid kind). A single 1-d vector is accepted too.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ContractError
from .numeric import Rng, affine, relu, sigmoid

VECTOR = "vector"
SCALAR_SIGMOID = "scalar-sigmoid"
OUTPUT_KINDS = (VECTOR, SCALAR_SIGMOID)

TRAIN = "train"
INFER = "infer"

INIT_STD = 0.02


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    dropout_rate: float = 0.0
    output_kind: str = VECTOR

    def __post_init__(self):
        if self.output_kind not in OUTPUT_KINDS:
            raise ConfigurationError(f"unknown output kind {self.output_kind!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        h, o = self.hidden_dim, self.out_dim
        if self.b1.shape != (h,) or self.W2.shape[1] != h or self.b2.shape != (o,):
            raise ConfigurationError(
                f"inconsistent MLP shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )
        if self.output_kind == SCALAR_SIGMOID and o != 1:
            raise ConfigurationError("scalar-sigmoid MLP must have out_dim == 1")

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    def tensors(self) -> Dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "MlpParams":
        return MlpParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(),
                         self.dropout_rate, self.output_kind)


@dataclass
class ForwardCache:
    params: MlpParams
    x: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    mask: np.ndarray
    out: np.ndarray
    squeeze: bool = False


def init_mlp(rng: Rng, in_dim: int, hidden_dim: int, out_dim: int,
             dropout_rate: float = 0.0, output_kind: str = VECTOR,
             std: float = INIT_STD) -> MlpParams:
    """Normal(0, std^2) weights and zero biases."""
    if min(in_dim, hidden_dim, out_dim) <= 0:
        raise ConfigurationError("MLP dimensions must be positive")
    W1 = rng.normal(0.0, std, (hidden_dim, in_dim))
    W2 = rng.normal(0.0, std, (out_dim, hidden_dim))
    return MlpParams(W1, np.zeros(hidden_dim), W2, np.zeros(out_dim), dropout_rate, output_kind)


def dropout(rng: Optional[Rng], h: np.ndarray, rate: float, mode: str) -> Tuple[np.ndarray, np.ndarray]:
    """Inverted dropout. Returns ``(output, mask)`` with ``output == h * mask``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == INFER or rate == 0.0:
        return h, np.ones_like(h)
    if mode != TRAIN:
        raise ConfigurationError(f"unknown mode {mode!r}")
    if rng is None:
        raise ConfigurationError("train-mode dropout needs an Rng")
    keep = rng.uniform(h.shape) >= rate
    mask = keep / (1.0 - rate)
    return h * mask, mask


def mlp_forward(p: MlpParams, x, mode: str = INFER, rng: Optional[Rng] = None):
    """Forward pass; returns ``(output, cache)``.

    ``relu`` hidden layer, dropout between hidden and output layer, linear
    output (or a sigmoid scalar per row for the scalar-sigmoid kind).
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    X = x[None, :] if squeeze else x
    if X.ndim != 2 or X.shape[1] != p.in_dim:
        raise ConfigurationError(f"MLP expects input dim {p.in_dim}, got shape {x.shape}")
    pre = affine(p.W1, p.b1, X)
    h = relu(pre)
    hd, mask = dropout(rng, h, p.dropout_rate, mode)
    out = affine(p.W2, p.b2, hd)
    if p.output_kind == SCALAR_SIGMOID:
        out = sigmoid(out[:, 0])
    cache = ForwardCache(p, X, pre, hd, mask, out, squeeze)
    if squeeze:
        return out[0], cache
    return out, cache


def mlp_backward(p: MlpParams, cache: ForwardCache, grad_out):
    """Gradients of a cached forward computation (dropout mask held fixed).

    Returns ``(grads, grad_input)`` where ``grads`` maps tensor names to arrays
    shaped like the parameters.
    """
    if cache.params is not p:
        raise ContractError("forward cache belongs to a different parameter set")
    if cache.x.shape[1] != p.in_dim or cache.pre.shape[1] != p.hidden_dim:
        raise ContractError("forward cache does not match current parameter shapes")
    g = np.asarray(grad_out, dtype=np.float64)
    n = cache.x.shape[0]
    if p.output_kind == SCALAR_SIGMOID:
        g = np.reshape(g, (n,))
        s = cache.out
        gz = (g * s * (1.0 - s))[:, None]
    else:
        gz = np.reshape(g, (n, p.out_dim))
    gW2 = gz.T @ cache.hidden
    gb2 = gz.sum(axis=0)
    gh = (gz @ p.W2) * cache.mask
    gpre = gh * (cache.pre > 0)
    gW1 = gpre.T @ cache.x
    gb1 = gpre.sum(axis=0)
    gx = gpre @ p.W1
    grads = {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}
    return grads, (gx[0] if cache.squeeze else gx)


@dataclass
class Adam:
    """Adam with bias correction over a named collection of arrays."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive")

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        if set(params) != set(grads):
            raise ContractError("parameter and gradient names differ")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name in sorted(params):
            p, g = params[name], grads[name]
            if p.shape != g.shape:
                raise ContractError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            elif self.m[name].shape != p.shape:
                raise ContractError(f"optimizer state shape drifted for {name}")
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: Adam) -> Adam:
    state.step(params, grads)
    return state


def finite_diff_check(loss_fn: Callable[[], float], params: Dict[str, np.ndarray],
                      grads: Dict[str, np.ndarray], step: float = 1e-6,
                      names: Optional[Iterable[str]] = None) -> float:
    """Worst relative error between ``grads`` and central differences.

    ``loss_fn`` takes no arguments and must read the arrays in ``params``,
    which are perturbed in place and restored. Relative error uses the
    denominator ``max(|analytic|, |numeric|, 1e-8)``.
    """
    worst = 0.0
    for name in (names if names is not None else sorted(params)):
        p, g = params[name], grads[name]
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = gflat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst

