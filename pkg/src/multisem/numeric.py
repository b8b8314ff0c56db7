"""Dense float64 primitives and seeded random sampling.

Vectors and matrices are plain ``numpy.float64`` arrays. Most functions also
accept a leading batch axis, which is how the rest of the package uses them.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigurationError


def as_vec(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] == 0:
        raise ConfigurationError(f"{name} must be a non-empty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    return arr


def as_mat(x, name: str = "W") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or 0 in arr.shape:
        raise ConfigurationError(f"{name} must be a non-empty 2-d matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    return arr


class Rng:
    """Explicitly seeded random stream.

    Identical seeds give bit-identical sample streams. Instances are not
    thread-safe; give each concurrent consumer its own ``Rng``.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, mean=0.0, std=1.0, size=None) -> np.ndarray:
        return self._gen.normal(mean, std, size)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, uniformly, in draw order."""
        return self._gen.permutation(n)[:k]

    def child(self, *keys) -> "Rng":
        return Rng(derive_seed(self.seed, *keys))

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def derive_seed(base: int, *keys) -> int:
    """Stable 64-bit seed from a base seed and any printable keys."""
    h = hashlib.sha256(str(int(base)).encode())
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode())
    return int.from_bytes(h.digest()[:8], "little")


def affine(W, b, x) -> np.ndarray:
    """``W @ x + b``; ``x`` may carry a leading batch axis."""
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or b.ndim != 1 or x.ndim not in (1, 2):
        raise ConfigurationError("affine expects W 2-d, b 1-d and x 1-d or 2-d")
    if x.shape[-1] != W.shape[1]:
        raise ConfigurationError(f"affine: W has {W.shape[1]} columns but x has dim {x.shape[-1]}")
    if b.shape[0] != W.shape[0]:
        raise ConfigurationError(f"affine: W has {W.shape[0]} rows but b has dim {b.shape[0]}")
    return x @ W.T + b


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[axis] == 0:
        raise ConfigurationError("softmax of an empty input")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[axis] == 0:
        raise ConfigurationError("log_softmax of an empty input")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    # drop one max term and use log1p: exact zero loss for saturated rows
    # instead of a rounding residue of fl(1 + tiny)
    top = np.expand_dims(np.argmax(z, axis=axis), axis)
    np.put_along_axis(e, top, 0.0, axis=axis)
    return z - np.log1p(e.sum(axis=axis, keepdims=True))


def sigmoid(x):
    """Logistic function, evaluated without overflow for either sign."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def sq_euclidean(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"sq_euclidean: shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(d @ d)


def pairwise_sq_euclidean(Q, P) -> np.ndarray:
    """Matrix of squared distances, ``out[m, c] = ||Q[m] - P[c]||^2``."""
    Q = np.asarray(Q, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if Q.ndim != 2 or P.ndim != 2 or Q.shape[1] != P.shape[1]:
        raise ConfigurationError(f"pairwise_sq_euclidean: incompatible shapes {Q.shape}, {P.shape}")
    # explicit differences rather than the |q|^2 - 2qp + |p|^2 expansion,
    # which loses precision exactly where distances are small
    diff = Q[:, None, :] - P[None, :, :]
    return np.einsum("mcd,mcd->mc", diff, diff)


def sample_gaussian(rng: Rng, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0:
        raise ConfigurationError("sample_gaussian: std must be non-negative")
    if std == 0:
        return np.full(int(n), float(mean))
    return rng.normal(mean, std, int(n))
