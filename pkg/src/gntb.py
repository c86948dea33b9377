"""Generalized neural tensor block (GNTB).

Composes the previous context with the current utterance through a bank of
``k`` bilinear forms plus a linear map::

    m   = context ⊕ u                      (length 2d)
    b_i = mᵀ T_i m                          (i = 1..k)
    p   = f(b + W m)                        (projected to d when k != d)

In low-rank mode every slice is stored as ``T_i = U_i V_i + diag(e_i)`` and
the bilinear term is evaluated through the factors; ``T_i`` is only built by
:func:`materialize_slice`, which tests use as an oracle.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .numkit import (
    ACTIVATIONS,
    NonFiniteError,
    SeededRng,
    ShapeError,
    StaleCacheError,
    activation,
    activation_grad,
    check_shape,
    init_params,
)

LOW_RANK = "low-rank"
FULL_RANK = "full-rank"
DEFAULT_RANK = 10


@dataclass
class GntbConfig:
    """Shape and behavior of one GNTB."""

    d: int
    k: Optional[int] = None
    r: int = DEFAULT_RANK
    activation: str = "sigmoid"
    mode: str = LOW_RANK

    def __post_init__(self) -> None:
        if self.k is None:
            self.k = self.d
        if self.d < 1:
            raise ValueError(f"gntb: d must be >= 1, got {self.d}")
        if self.k < 1:
            raise ValueError(f"gntb: k must be >= 1, got {self.k}")
        if self.mode not in (LOW_RANK, FULL_RANK):
            raise ValueError(f"gntb: unknown mode {self.mode!r}")
        if self.mode == LOW_RANK and not 1 <= self.r <= 2 * self.d:
            raise ValueError(f"gntb: rank must be in [1, {2 * self.d}], got {self.r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"gntb: unknown activation {self.activation!r}")

    @property
    def has_proj(self) -> bool:
        return self.k != self.d

    def to_dict(self) -> Dict:
        return {
            "d": self.d,
            "k": self.k,
            "r": self.r,
            "activation": self.activation,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "GntbConfig":
        return cls(**data)


@dataclass
class GntbParams:
    """Parameters of one GNTB.

    Low-rank mode fills ``U`` (k, 2d, r), ``V`` (k, r, 2d) and ``e`` (k, 2d);
    full-rank mode fills ``T`` (k, 2d, 2d). ``W`` is (k, 2d) and ``proj`` is
    (d, k), present only when k != d.
    """

    config: GntbConfig
    W: np.ndarray
    U: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    e: Optional[np.ndarray] = None
    T: Optional[np.ndarray] = None
    proj: Optional[np.ndarray] = None

    def named(self) -> Dict[str, np.ndarray]:
        """Parameter arrays by name, in serialization order."""
        out: Dict[str, np.ndarray] = {}
        if self.config.mode == LOW_RANK:
            out["U"] = self.U
            out["V"] = self.V
            out["e"] = self.e
        else:
            out["T"] = self.T
        out["W"] = self.W
        if self.proj is not None:
            out["proj"] = self.proj
        return out

    def zeros_like(self) -> "GntbParams":
        return GntbParams(
            config=self.config,
            **{name: np.zeros_like(arr) for name, arr in self.named().items()},
        )


def param_shapes(config: GntbConfig) -> Dict[str, Tuple[int, ...]]:
    """Expected shape of every parameter array for ``config``."""
    d, k, r = config.d, config.k, config.r
    shapes: Dict[str, Tuple[int, ...]] = {}
    if config.mode == LOW_RANK:
        shapes["U"] = (k, 2 * d, r)
        shapes["V"] = (k, r, 2 * d)
        shapes["e"] = (k, 2 * d)
    else:
        shapes["T"] = (k, 2 * d, 2 * d)
    shapes["W"] = (k, 2 * d)
    if config.has_proj:
        shapes["proj"] = (d, k)
    return shapes


def count_params(config: GntbConfig) -> int:
    """Closed-form parameter count."""
    d, k, r = config.d, config.k, config.r
    if config.mode == LOW_RANK:
        total = k * (2 * d * r + r * 2 * d + 2 * d) + k * 2 * d
    else:
        total = k * (2 * d) ** 2 + k * 2 * d
    if config.has_proj:
        total += d * k
    return total


def init_gntb(config: GntbConfig, rng: SeededRng) -> GntbParams:
    """Glorot-uniform initialization of every factor, slice by slice."""
    d, k, r = config.d, config.k, config.r
    n = 2 * d
    params = GntbParams(config=config, W=init_params(rng, k, n, "uniform-glorot"))
    if config.mode == LOW_RANK:
        params.U = np.stack([init_params(rng, n, r, "uniform-glorot") for _ in range(k)])
        params.V = np.stack([init_params(rng, r, n, "uniform-glorot") for _ in range(k)])
        params.e = np.stack(
            [init_params(rng, 1, n, "uniform-glorot")[0] for _ in range(k)]
        )
    else:
        params.T = np.stack([init_params(rng, n, n, "uniform-glorot") for _ in range(k)])
    if config.has_proj:
        params.proj = init_params(rng, d, k, "uniform-glorot")
    return params


def validate_params(params: GntbParams) -> None:
    for name, shape in param_shapes(params.config).items():
        arr = getattr(params, name)
        if arr is None:
            raise ShapeError(f"gntb: missing parameter {name}")
        check_shape(arr, shape, f"gntb.{name}")


def materialize_slice(params: GntbParams, i: int) -> np.ndarray:
    """Build ``T_i = U_i V_i + diag(e_i)`` as a dense 2d x 2d matrix."""
    if params.config.mode != LOW_RANK:
        raise ValueError("materialize_slice needs low-rank parameters")
    if not 0 <= i < params.config.k:
        raise IndexError(f"slice index {i} out of range [0, {params.config.k})")
    return params.U[i] @ params.V[i] + np.diag(params.e[i])


def to_full_rank(params: GntbParams) -> GntbParams:
    """Full-rank parameters computing the same function as ``params``."""
    cfg = params.config
    full_cfg = GntbConfig(
        d=cfg.d, k=cfg.k, r=cfg.r, activation=cfg.activation, mode=FULL_RANK
    )
    slices = np.stack([materialize_slice(params, i) for i in range(cfg.k)])
    proj = None if params.proj is None else params.proj.copy()
    return GntbParams(config=full_cfg, W=params.W.copy(), T=slices, proj=proj)


@dataclass
class GntbCache:
    """Intermediate values kept by :func:`gntb_forward` for the backward pass."""

    owner: int
    m: np.ndarray
    bilinear: np.ndarray
    pre: np.ndarray
    act: np.ndarray
    Um: Optional[np.ndarray] = None  # U_iᵀ m per slice, (k, r)
    Vm: Optional[np.ndarray] = None  # V_i m per slice, (k, r)


def bilinear_term(params: GntbParams, m: np.ndarray) -> Tuple[np.ndarray, ...]:
    """Return ``(b, Um, Vm)`` with b_i = mᵀ T_i m."""
    if params.config.mode == LOW_RANK:
        Um = np.einsum("knr,n->kr", params.U, m)
        Vm = np.einsum("krn,n->kr", params.V, m)
        b = np.sum(Um * Vm, axis=1) + params.e @ (m * m)
        return b, Um, Vm
    b = np.einsum("n,knj,j->k", m, params.T, m)
    return b, None, None


def gntb_forward(
    params: GntbParams, p_prev: np.ndarray, u_t: np.ndarray
) -> Tuple[np.ndarray, GntbCache]:
    """Compose ``p_prev`` with ``u_t`` into the contextual utterance vector."""
    d = params.config.d
    if p_prev.shape != (d,) or u_t.shape != (d,):
        raise ShapeError(
            f"gntb_forward: expected context and utterance of length {d}, "
            f"got {p_prev.shape} and {u_t.shape}"
        )
    m = np.concatenate([p_prev, u_t])
    b, Um, Vm = bilinear_term(params, m)
    pre = b + params.W @ m
    bad = np.flatnonzero(~np.isfinite(pre))
    if bad.size:
        raise NonFiniteError(f"gntb: non-finite pre-activation at slice {int(bad[0])}")
    act = activation(params.config.activation, pre)
    p_t = act if params.proj is None else params.proj @ act
    cache = GntbCache(owner=id(params), m=m, bilinear=b, pre=pre, act=act, Um=Um, Vm=Vm)
    return p_t, cache


def gntb_backward(
    params: GntbParams, cache: GntbCache, grad_p_t: np.ndarray
) -> Tuple[GntbParams, np.ndarray, np.ndarray]:
    """Exact gradients of every parameter and of both inputs."""
    cfg = params.config
    d, k = cfg.d, cfg.k
    if cache.owner != id(params) or cache.m.shape != (2 * d,) or cache.pre.shape != (k,):
        raise StaleCacheError("gntb_backward: cache does not match these parameters")
    if grad_p_t.shape != (d,):
        raise ShapeError(f"gntb_backward: expected gradient of length {d}, got {grad_p_t.shape}")

    grads = params.zeros_like()
    m = cache.m
    if params.proj is not None:
        grads.proj = np.outer(grad_p_t, cache.act)
        grad_act = params.proj.T @ grad_p_t
    else:
        grad_act = grad_p_t
    grad_pre = grad_act * activation_grad(cfg.activation, cache.pre)

    grads.W = np.outer(grad_pre, m)
    grad_m = params.W.T @ grad_pre
    if cfg.mode == LOW_RANK:
        # (T_i + T_iᵀ) m = U_i (V_i m) + V_iᵀ (U_iᵀ m) + 2 e_i ⊙ m
        grads.U = np.einsum("k,n,kr->knr", grad_pre, m, cache.Vm)
        grads.V = np.einsum("k,kr,n->krn", grad_pre, cache.Um, m)
        grads.e = np.outer(grad_pre, m * m)
        grad_m = grad_m + np.einsum("k,knr,kr->n", grad_pre, params.U, cache.Vm)
        grad_m = grad_m + np.einsum("k,krn,kr->n", grad_pre, params.V, cache.Um)
        grad_m = grad_m + 2.0 * (grad_pre @ params.e) * m
    else:
        grads.T = np.einsum("k,n,j->knj", grad_pre, m, m)
        sym = params.T + np.transpose(params.T, (0, 2, 1))
        grad_m = grad_m + np.einsum("k,knj,j->n", grad_pre, sym, m)
    return grads, grad_m[:d], grad_m[d:]
