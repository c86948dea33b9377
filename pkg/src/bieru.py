"""Bidirectional emotional recurrent unit (BiERU).

One ERU step runs GNTB, dropout, TFE and dropout again. A direction threads
the ERU over a conversation, either in time order or back to front, and the
model concatenates the two directions per utterance.

Context wiring:

* ``gc`` (global context): the GNTB context is the previous GNTB output of
  the same direction, starting from the zero vector.
* ``lc`` (local context): the GNTB context is the neighboring utterance in
  processing order (u_{t-1} forward, u_{t+1} backward), zero at the edge.

In both variants the TFE LSTM state threads through the direction. The
forward and backward directions own independent parameters.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import gntb as gntb_mod
from . import heads as heads_mod
from . import tfe as tfe_mod
from .gntb import GntbCache, GntbConfig, GntbParams, gntb_backward, gntb_forward
from .heads import CLASSIFY, REGRESS, HeadParams
from .numkit import SeededRng, ShapeError, StaleCacheError, dropout_mask
from .tfe import TfeCache, TfeConfig, TfeParams, TfeState, tfe_backward, tfe_forward

VARIANTS = ("gc", "lc")
ABLATIONS = ("full", "gntb-only", "tfe-only")
INIT_SCHEME = "uniform-glorot"


@dataclass
class ModelConfig:
    gntb: GntbConfig
    tfe: TfeConfig
    variant: str = "lc"
    task: str = CLASSIFY
    n_class: int = 6
    dropout_rate: float = 0.0
    ablation: str = "full"
    head_bias: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}, expected one of {ABLATIONS}")
        if self.task not in (CLASSIFY, REGRESS):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == CLASSIFY and self.n_class < 2:
            raise ValueError(f"classification needs n_class >= 2, got {self.n_class}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1): {self.dropout_rate}")
        if self.gntb.d != self.tfe.d:
            raise ShapeError(
                f"GNTB output dimension {self.gntb.d} != TFE input dimension {self.tfe.d}"
            )

    @property
    def d(self) -> int:
        return self.gntb.d

    @property
    def uses_gntb(self) -> bool:
        return self.ablation != "tfe-only"

    @property
    def uses_tfe(self) -> bool:
        return self.ablation != "gntb-only"

    @property
    def direction_dim(self) -> int:
        return self.tfe.out_dim if self.uses_tfe else self.d

    @property
    def d_e(self) -> int:
        return 2 * self.direction_dim

    def to_dict(self) -> Dict:
        return {
            "gntb": self.gntb.to_dict(),
            "tfe": self.tfe.to_dict(),
            "variant": self.variant,
            "task": self.task,
            "n_class": self.n_class,
            "dropout_rate": self.dropout_rate,
            "ablation": self.ablation,
            "head_bias": self.head_bias,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelConfig":
        data = dict(data)
        data["gntb"] = GntbConfig.from_dict(data["gntb"])
        data["tfe"] = TfeConfig.from_dict(data["tfe"])
        return cls(**data)


@dataclass
class DirectionParams:
    gntb: Optional[GntbParams] = None
    tfe: Optional[TfeParams] = None

    def named(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        if self.gntb is not None:
            out.update({f"gntb.{n}": a for n, a in self.gntb.named().items()})
        if self.tfe is not None:
            out.update({f"tfe.{n}": a for n, a in self.tfe.named().items()})
        return out

    def zeros_like(self) -> "DirectionParams":
        return DirectionParams(
            gntb=None if self.gntb is None else self.gntb.zeros_like(),
            tfe=None if self.tfe is None else self.tfe.zeros_like(),
        )


@dataclass
class BieruModel:
    config: ModelConfig
    fwd: DirectionParams
    bwd: DirectionParams
    head: HeadParams

    def named_tensors(self) -> Dict[str, np.ndarray]:
        """Every trainable array by dotted name, in serialization order.

        The arrays are the model's own storage: writing into them updates
        the model.
        """
        out: Dict[str, np.ndarray] = {}
        for prefix, direction in (("fwd", self.fwd), ("bwd", self.bwd)):
            out.update({f"{prefix}.{n}": a for n, a in direction.named().items()})
        out.update({f"head.{n}": a for n, a in self.head.named().items()})
        return out

    def zeros_like(self) -> "BieruModel":
        return BieruModel(
            config=self.config,
            fwd=self.fwd.zeros_like(),
            bwd=self.bwd.zeros_like(),
            head=self.head.zeros_like(),
        )

    def num_params(self) -> int:
        return sum(a.size for a in self.named_tensors().values())


def model_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Shape of every named tensor a model built from ``config`` holds."""
    shapes: Dict[str, Tuple[int, ...]] = {}
    for prefix in ("fwd", "bwd"):
        if config.uses_gntb:
            for n, s in gntb_mod.param_shapes(config.gntb).items():
                shapes[f"{prefix}.gntb.{n}"] = s
        if config.uses_tfe:
            for n, s in tfe_mod.param_shapes(config.tfe).items():
                shapes[f"{prefix}.tfe.{n}"] = s
    for n, s in heads_mod.head_shapes(
        config.task, config.d_e, config.n_class, config.head_bias
    ).items():
        shapes[f"head.{n}"] = s
    return shapes


def init_direction(config: ModelConfig, rng: SeededRng) -> DirectionParams:
    return DirectionParams(
        gntb=gntb_mod.init_gntb(config.gntb, rng) if config.uses_gntb else None,
        tfe=tfe_mod.init_tfe(config.tfe, rng) if config.uses_tfe else None,
    )


def init_model(config: ModelConfig, rng: SeededRng) -> BieruModel:
    fwd = init_direction(config, rng)
    bwd = init_direction(config, rng)
    head = heads_mod.init_head(
        config.task, config.d_e, config.n_class, rng, bias=config.head_bias
    )
    return BieruModel(config=config, fwd=fwd, bwd=bwd, head=head)


# ---------------------------------------------------------------------------
# ERU step
# ---------------------------------------------------------------------------
@dataclass
class StepCache:
    gntb: Optional[GntbCache]
    tfe: Optional[TfeCache]
    mask_p: Optional[np.ndarray]
    mask_e: Optional[np.ndarray]


def _mask(rng: Optional[SeededRng], size: int, rate: float, train_mode: bool):
    if not train_mode or rate == 0.0:
        return None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    return dropout_mask(rng, size, rate)


def eru_step(
    params: DirectionParams,
    config: ModelConfig,
    context: np.ndarray,
    u_t: np.ndarray,
    state: Optional[TfeState],
    train_mode: bool = False,
    rng: Optional[SeededRng] = None,
) -> Tuple[np.ndarray, np.ndarray, Optional[TfeState], StepCache]:
    """One ERU step: returns ``(e_t, p_t, new_state, cache)``.

    ``p_t`` is the GNTB output before dropout (``u_t`` itself under the
    tfe-only ablation). Eval mode applies no dropout and draws nothing from
    ``rng``.
    """
    rate = config.dropout_rate
    gntb_cache = None
    tfe_cache = None
    mask_p = None
    mask_e = None

    if config.uses_gntb:
        p_t, gntb_cache = gntb_forward(params.gntb, context, u_t)
        mask_p = _mask(rng, p_t.shape[0], rate, train_mode)
        p_in = p_t if mask_p is None else p_t * mask_p
    else:
        p_t = u_t
        p_in = u_t

    if config.uses_tfe:
        e_t, state, tfe_cache = tfe_forward(params.tfe, p_in, state)
        mask_e = _mask(rng, e_t.shape[0], rate, train_mode)
        if mask_e is not None:
            e_t = e_t * mask_e
    else:
        e_t = p_in
    return e_t, p_t, state, StepCache(gntb_cache, tfe_cache, mask_p, mask_e)


# ---------------------------------------------------------------------------
# One direction
# ---------------------------------------------------------------------------
@dataclass
class DirectionCache:
    owner: int
    reversed: bool
    order: List[int]
    contexts: List[np.ndarray] = field(default_factory=list)
    p: List[np.ndarray] = field(default_factory=list)
    steps: List[StepCache] = field(default_factory=list)


def _as_utterances(utterances, d: int) -> np.ndarray:
    arr = np.asarray(utterances, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("conversation must contain at least one utterance")
    if arr.shape[1] != d:
        raise ShapeError(f"utterance features have length {arr.shape[1]}, expected {d}")
    return arr


def run_direction(
    params: DirectionParams,
    utterances,
    config: ModelConfig,
    reversed: bool = False,
    train_mode: bool = False,
    rng: Optional[SeededRng] = None,
) -> Tuple[np.ndarray, DirectionCache]:
    """Thread the ERU over a conversation.

    Features come back aligned to the original time order, one row per
    utterance; the cache lists steps in processing order.
    """
    u = _as_utterances(utterances, config.d)
    T = u.shape[0]
    order = list(range(T - 1, -1, -1)) if reversed else list(range(T))
    cache = DirectionCache(owner=id(params), reversed=reversed, order=order)
    features = np.zeros((T, config.direction_dim))
    state = TfeState.zeros(config.tfe.hidden) if config.uses_tfe else None
    zero = np.zeros(config.d)
    p_prev = zero

    for j, pos in enumerate(order):
        if config.variant == "gc":
            context = p_prev
        else:
            context = u[order[j - 1]] if j > 0 else zero
        e_t, p_t, state, step = eru_step(
            params, config, context, u[pos], state, train_mode, rng
        )
        features[pos] = e_t
        cache.contexts.append(context)
        cache.p.append(p_t)
        cache.steps.append(step)
        p_prev = p_t if config.uses_gntb else zero
    return features, cache


def _accumulate(into: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
    for name, arr in grads.items():
        into[name] += arr


def direction_backward(
    params: DirectionParams,
    config: ModelConfig,
    cache: DirectionCache,
    grad_features: np.ndarray,
) -> Tuple[DirectionParams, np.ndarray]:
    """BPTT through one direction.

    ``grad_features`` is aligned to the original time order. Returns the
    parameter gradients and the gradient wrt every utterance vector.
    """
    if cache.owner != id(params):
        raise StaleCacheError("direction cache does not match these parameters")
    T = len(cache.order)
    if grad_features.shape != (T, config.direction_dim):
        raise ShapeError(
            f"expected feature gradients of shape {(T, config.direction_dim)}, "
            f"got {grad_features.shape}"
        )
    grads = params.zeros_like()
    grad_u = np.zeros((T, config.d))
    grad_state = TfeState.zeros(config.tfe.hidden) if config.uses_tfe else None
    grad_chain = np.zeros(config.d)

    for j in range(T - 1, -1, -1):
        pos = cache.order[j]
        step = cache.steps[j]
        grad_e = grad_features[pos]

        if config.uses_tfe:
            if step.mask_e is not None:
                grad_e = grad_e * step.mask_e
            _, grad_p_in, grad_state = tfe_backward(
                params.tfe, step.tfe, grad_e, grad_state, grads.tfe
            )
        else:
            grad_p_in = grad_e

        if not config.uses_gntb:
            grad_u[pos] += grad_p_in
            continue

        grad_p = grad_p_in if step.mask_p is None else grad_p_in * step.mask_p
        grad_p = grad_p + grad_chain
        step_grads, grad_context, grad_u_t = gntb_backward(params.gntb, step.gntb, grad_p)
        _accumulate(grads.gntb.named(), step_grads.named())
        grad_u[pos] += grad_u_t
        if config.variant == "gc":
            grad_chain = grad_context
        elif j > 0:
            grad_u[cache.order[j - 1]] += grad_context
    return grads, grad_u


# ---------------------------------------------------------------------------
# Both directions
# ---------------------------------------------------------------------------
@dataclass
class BieruCache:
    fwd: DirectionCache
    bwd: DirectionCache


def bieru_forward(
    model: BieruModel,
    utterances,
    train_mode: bool = False,
    rng: Optional[SeededRng] = None,
) -> Tuple[np.ndarray, BieruCache]:
    """Emotion features ``e_t = e_t^fwd ⊕ e_t^bwd`` for every utterance."""
    cfg = model.config
    fwd_feats, fwd_cache = run_direction(model.fwd, utterances, cfg, False, train_mode, rng)
    bwd_feats, bwd_cache = run_direction(model.bwd, utterances, cfg, True, train_mode, rng)
    return np.concatenate([fwd_feats, bwd_feats], axis=1), BieruCache(fwd_cache, bwd_cache)


def bieru_backward(
    model: BieruModel, cache: BieruCache, grad_features: np.ndarray
) -> Tuple[BieruModel, np.ndarray]:
    """Gradients of both directions plus the gradient wrt the utterances.

    The head entries of the returned gradient model are zero; the loss
    backward fills them.
    """
    half = model.config.direction_dim
    if grad_features.ndim != 2 or grad_features.shape[1] != 2 * half:
        raise ShapeError(
            f"expected feature gradients with {2 * half} columns, got {grad_features.shape}"
        )
    grads = model.zeros_like()
    grads.fwd, grad_u_fwd = direction_backward(
        model.fwd, model.config, cache.fwd, grad_features[:, :half]
    )
    grads.bwd, grad_u_bwd = direction_backward(
        model.bwd, model.config, cache.bwd, grad_features[:, half:]
    )
    return grads, grad_u_fwd + grad_u_bwd
