"""Binary checkpoint format.

Layout::

    +----------+----------------------+------------------+-----------------+
    | magic 8B | header length (u64)  | header (UTF-8    | payload         |
    | BIERUCKP | little-endian        | JSON)            | float64 LE      |
    +----------+----------------------+------------------+-----------------+

The header carries the format version, the run and model configuration, a
tensor index ``[{name, shape, offset}]`` (offsets in bytes from the start of
the payload), the optional optimizer index, the training RNG state, the
epoch counter and the epoch history. The payload holds the model tensors,
then Adam first moments, then Adam second moments, each in index order.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .bieru import BieruModel, ModelConfig, init_model, model_shapes
from .numkit import SeededRng
from .train import AdamState, TrainState

logger = logging.getLogger(__name__)

MAGIC = b"BIERUCKP"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")
_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    """Base class for unreadable checkpoints."""


class CorruptHeaderError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model: BieruModel
    train_state: Optional[TrainState] = None
    run_config: Dict[str, Any] = field(default_factory=dict)
    header: Dict[str, Any] = field(default_factory=dict)


def _index(named: Dict[str, np.ndarray], start: int) -> Tuple[List[Dict], int]:
    entries = []
    offset = start
    for name, arr in named.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * _F64.itemsize
    return entries, offset


def encode_checkpoint(
    model: BieruModel,
    train_state: Optional[TrainState] = None,
    run_config: Optional[Dict[str, Any]] = None,
) -> bytes:
    named = model.named_tensors()
    tensors, end = _index(named, 0)
    header: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "run_config": run_config or {},
        "init_scheme": "uniform-glorot",
        "tensors": tensors,
        "optimizer": None,
        "rng_state": None,
        "epoch": 0,
        "history": [],
    }
    arrays = list(named.values())
    if train_state is not None:
        adam = train_state.adam
        m_index, end = _index(adam.m, end)
        v_index, end = _index(adam.v, end)
        header["optimizer"] = {
            "kind": "adam",
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "t": adam.t,
            "m": m_index,
            "v": v_index,
        }
        header["rng_state"] = train_state.rng.get_state()
        header["epoch"] = train_state.epoch
        header["history"] = train_state.history
        header["best_val_loss"] = train_state.best_val_loss
        header["stale_epochs"] = train_state.stale_epochs
        arrays += list(adam.m.values()) + list(adam.v.values())
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype=_F64).tobytes() for a in arrays)
    return MAGIC + _LEN.pack(len(header_bytes)) + header_bytes + payload


def save_checkpoint(
    path: Union[str, Path],
    model: BieruModel,
    train_state: Optional[TrainState] = None,
    run_config: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_checkpoint(model, train_state, run_config)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    logger.info("wrote checkpoint %s (%d bytes)", path, len(blob))
    return path


def _read_header(blob: bytes) -> Tuple[Dict[str, Any], bytes]:
    if len(blob) < len(MAGIC) + _LEN.size or blob[: len(MAGIC)] != MAGIC:
        raise CorruptHeaderError("not a checkpoint file (bad magic)")
    (length,) = _LEN.unpack_from(blob, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if start + length > len(blob):
        raise CorruptHeaderError("header length exceeds file size")
    try:
        header = json.loads(blob[start : start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeaderError(f"unreadable header: {exc}")
    if not isinstance(header, dict) or "format_version" not in header:
        raise CorruptHeaderError("header has no format version")
    if header["format_version"] != FORMAT_VERSION:
        raise VersionMismatchError(
            f"checkpoint format {header['format_version']}, expected {FORMAT_VERSION}"
        )
    for key in ("model_config", "tensors"):
        if key not in header:
            raise CorruptHeaderError(f"header is missing {key!r}")
    return header, blob[start + length :]


def _read_tensor(payload: bytes, entry: Dict[str, Any], shape: Tuple[int, ...]) -> np.ndarray:
    name = entry["name"]
    if tuple(entry["shape"]) != tuple(shape):
        raise ShapeMismatchError(
            f"tensor {name}: stored shape {tuple(entry['shape'])}, expected {tuple(shape)}"
        )
    count = int(np.prod(shape)) if shape else 1
    offset = int(entry["offset"])
    end = offset + count * _F64.itemsize
    if end > len(payload):
        raise TruncatedPayloadError(
            f"tensor {name}: payload ends at byte {len(payload)}, need {end}"
        )
    return np.frombuffer(payload, dtype=_F64, count=count, offset=offset).reshape(shape).copy()


def decode_checkpoint(blob: bytes, expected: Optional[ModelConfig] = None) -> Checkpoint:
    header, payload = _read_header(blob)
    try:
        stored = ModelConfig.from_dict(header["model_config"])
    except (TypeError, KeyError, ValueError) as exc:
        raise CorruptHeaderError(f"invalid model config: {exc}")
    config = expected or stored
    shapes = model_shapes(config)
    index = {e["name"]: e for e in header["tensors"]}
    missing = [n for n in shapes if n not in index]
    if missing:
        raise ShapeMismatchError(f"tensor {missing[0]} missing from checkpoint")
    extra = [n for n in index if n not in shapes]
    if extra:
        raise ShapeMismatchError(f"tensor {extra[0]} not part of this model")

    model = init_model(config, SeededRng(0))
    named = model.named_tensors()
    for name, shape in shapes.items():
        named[name][...] = _read_tensor(payload, index[name], shape)

    train_state = None
    opt = header.get("optimizer")
    if opt is not None:
        adam = AdamState(
            lr=opt["lr"], beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"], t=opt["t"]
        )
        for key, target in (("m", adam.m), ("v", adam.v)):
            entries = {e["name"]: e for e in opt[key]}
            for name, shape in shapes.items():
                if name not in entries:
                    raise ShapeMismatchError(f"optimizer {key} tensor {name} missing")
                target[name] = _read_tensor(payload, entries[name], shape)
        if header.get("rng_state") is None:
            raise CorruptHeaderError("optimizer state stored without rng state")
        train_state = TrainState(
            adam=adam,
            rng=SeededRng.from_state(header["rng_state"]),
            epoch=int(header.get("epoch", 0)),
            history=list(header.get("history", [])),
            best_val_loss=header.get("best_val_loss"),
            stale_epochs=int(header.get("stale_epochs", 0)),
        )
    return Checkpoint(
        model=model,
        train_state=train_state,
        run_config=header.get("run_config", {}),
        header=header,
    )


def load_checkpoint(path: Union[str, Path], expected: Optional[ModelConfig] = None) -> Checkpoint:
    """Read a checkpoint; ``expected`` validates tensor shapes against a config."""
    blob = Path(path).read_bytes()
    ckpt = decode_checkpoint(blob, expected)
    logger.info("loaded checkpoint %s (epoch %d)", path, ckpt.header.get("epoch", 0))
    return ckpt


def payload_length(path: Union[str, Path]) -> int:
    """Number of float64 values holding model parameters in a checkpoint."""
    header, _ = _read_header(Path(path).read_bytes())
    return sum(int(np.prod(e["shape"])) for e in header["tensors"])
