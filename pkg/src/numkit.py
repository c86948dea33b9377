"""Dense numeric kernel shared by every layer.

Vectors are 1-D ``float64`` numpy arrays and matrices are 2-D ``float64``
arrays. Randomness comes from a single documented generator: numpy's
``PCG64`` bit generator, seeded explicitly, so equal seeds give equal draws
on every platform.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional

import numpy as np

RNG_ALGORITHM = "PCG64"
ACTIVATIONS = ("tanh", "sigmoid", "relu")
INIT_SCHEMES = ("uniform-glorot", "zeros")
DEFAULT_FD_STEP = 1e-6


class ShapeError(ValueError):
    """Raised when operand dimensions do not line up."""


class NonFiniteError(ValueError):
    """Raised when a NaN or Inf shows up where a finite value is required."""


class StaleCacheError(ValueError):
    """Raised when a backward pass receives a cache it cannot belong to."""


@dataclass
class SeededRng:
    """Explicitly seeded random source (PCG64)."""

    seed: int
    algorithm: str = RNG_ALGORITHM
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.algorithm != RNG_ALGORITHM:
            raise ValueError(f"unsupported rng algorithm: {self.algorithm!r}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer: {self.seed}")
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, size: Any = None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size: Any = None):
        return self._gen.normal(loc, scale, size)

    def random(self, size: Any = None):
        return self._gen.random(size)

    def integers(self, low: int, high: int, size: Any = None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, offset: int) -> "SeededRng":
        """Independent generator derived from this seed."""
        return SeededRng((self.seed + 0x9E3779B97F4A7C15 * (offset + 1)) % 2**64)

    def get_state(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "algorithm": self.algorithm,
            "state": self._gen.bit_generator.state,
        }

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "SeededRng":
        rng = cls(int(state["seed"]), state.get("algorithm", RNG_ALGORITHM))
        rng._gen.bit_generator.state = state["state"]
        return rng


def as_vec(values: Any, name: str = "vector") -> np.ndarray:
    """Coerce ``values`` to a finite 1-D float64 array."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise ShapeError(f"{name}: expected a vector, got shape {vec.shape}")
    check_finite(vec, name)
    return vec


def check_finite(arr: np.ndarray, where: str) -> None:
    """Reject NaN/Inf entries, naming ``where`` in the error."""
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(np.ravel(arr)))[0])
        raise NonFiniteError(f"non-finite value in {where} (flat index {bad})")


def check_shape(arr: np.ndarray, expected: tuple, name: str) -> None:
    if tuple(arr.shape) != tuple(expected):
        raise ShapeError(f"{name}: expected shape {tuple(expected)}, got {arr.shape}")


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product with shape validation."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: cannot multiply {m.shape} by {v.shape}")
    return m @ v


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(kind: str, x: np.ndarray) -> np.ndarray:
    """Apply ``tanh``, ``sigmoid`` or ``relu`` elementwise."""
    x = np.asarray(x, dtype=np.float64)
    check_finite(x, f"{kind} input")
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    raise ValueError(f"unknown activation: {kind!r}")


def activation_grad(kind: str, x: np.ndarray) -> np.ndarray:
    """Derivative of :func:`activation` at ``x``.

    The relu derivative at exactly zero is taken as 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "sigmoid":
        s = sigmoid(x)
        return s * (1.0 - s)
    if kind == "relu":
        return (x > 0).astype(np.float64)
    raise ValueError(f"unknown activation: {kind!r}")


def init_params(rng: Optional[SeededRng], rows: int, cols: int, scheme: str):
    """Initialize a ``rows x cols`` matrix.

    ``uniform-glorot`` draws from U(-b, b) with b = sqrt(6 / (rows + cols));
    ``zeros`` is used for biases and initial states.
    """
    if rows <= 0 or cols <= 0:
        raise ShapeError(f"init_params: invalid shape {rows}x{cols}")
    if scheme == "zeros":
        return np.zeros((rows, cols), dtype=np.float64)
    if scheme == "uniform-glorot":
        if rng is None:
            raise ValueError("uniform-glorot initialization needs an rng")
        bound = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-bound, bound, size=(rows, cols))
    raise ValueError(f"unknown init scheme: {scheme!r}")


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    theta: np.ndarray,
    h: float = DEFAULT_FD_STEP,
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if h <= 0:
        raise ValueError(f"finite difference step must be positive: {h}")
    theta = np.array(theta, dtype=np.float64, copy=True)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        f_plus = float(f(theta))
        theta[i] = orig - h
        f_minus = float(f(theta))
        theta[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"non-finite function value at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a - b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def dropout_mask(rng: SeededRng, size: int, rate: float) -> np.ndarray:
    """Inverted dropout mask: kept units are scaled by 1 / (1 - rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1): {rate}")
    keep = rng.random(size) >= rate
    return keep.astype(np.float64) / (1.0 - rate)
