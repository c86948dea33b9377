"""Conversation datasets: ingestion, validation and synthesis.

A dataset file holds one conversation per line as a JSON record::

    {"id": "dlg-1", "utterances": [{"features": [...], "label": 2,
                                    "speaker": "A"}, ...]}

Regression datasets carry ``"intensity"`` instead of ``"label"``. A sidecar
manifest ``<stem>.manifest.json`` next to ``<stem>.jsonl`` declares the task,
the feature dimension and, when present, the expected counts.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .heads import CLASSIFY, REGRESS
from .numkit import SeededRng

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"
SPEAKERS = ("A", "B")


class DatasetError(ValueError):
    """Malformed or inconsistent dataset content."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")


@dataclass
class FeatureConversation:
    """One conversation: an utterance feature matrix plus per-utterance targets."""

    id: str
    features: np.ndarray  # (T, d)
    labels: Optional[np.ndarray] = None  # (T,) int, classification
    intensities: Optional[np.ndarray] = None  # (T,) float, regression
    speakers: Optional[List[str]] = None

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def targets(self) -> np.ndarray:
        return self.labels if self.labels is not None else self.intensities

    def to_record(self) -> Dict[str, Any]:
        utterances = []
        for t in range(len(self)):
            utt: Dict[str, Any] = {"features": [float(x) for x in self.features[t]]}
            if self.labels is not None:
                utt["label"] = int(self.labels[t])
            else:
                utt["intensity"] = float(self.intensities[t])
            if self.speakers is not None:
                utt["speaker"] = self.speakers[t]
            utterances.append(utt)
        return {"id": self.id, "utterances": utterances}


@dataclass
class DatasetManifest:
    task: str
    d: int
    n_class: Optional[int] = None
    label_names: Optional[List[str]] = None
    split: Optional[str] = None
    conversations: Optional[int] = None
    utterances: Optional[int] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"task": self.task, "d": self.d}
        if self.n_class is not None:
            out["n_class"] = self.n_class
        if self.label_names is not None:
            out["label_names"] = list(self.label_names)
        if self.split is not None:
            out["split"] = self.split
        if self.conversations is not None:
            out["conversations"] = self.conversations
        if self.utterances is not None:
            out["utterances"] = self.utterances
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DatasetManifest":
        known = {"task", "d", "n_class", "label_names", "split", "conversations", "utterances"}
        if "task" not in data or "d" not in data:
            raise DatasetError("manifest must declare 'task' and 'd'")
        return cls(
            task=data["task"],
            d=int(data["d"]),
            n_class=data.get("n_class"),
            label_names=data.get("label_names"),
            split=data.get("split"),
            conversations=data.get("conversations"),
            utterances=data.get("utterances"),
            extra={k: v for k, v in data.items() if k not in known},
        )


@dataclass
class Dataset:
    conversations: List[FeatureConversation]
    manifest: DatasetManifest

    def __len__(self) -> int:
        return len(self.conversations)

    @property
    def num_utterances(self) -> int:
        return sum(len(c) for c in self.conversations)


def manifest_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.stem + MANIFEST_SUFFIX)


def _as_float(value: Any) -> float:
    # bool and str are rejected; float() would accept both
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"not a number: {value!r}")
    return float(value)


def _parse_conversation(
    record: Any, path: str, line: int, d: Optional[int], task: Optional[str]
) -> FeatureConversation:
    if not isinstance(record, dict) or "utterances" not in record:
        raise DatasetError("record must be an object with 'utterances'", path, line)
    utts = record["utterances"]
    if not isinstance(utts, list) or not utts:
        raise DatasetError("empty conversation", path, line)
    conv_id = str(record.get("id", f"line-{line}"))

    rows: List[List[float]] = []
    labels: List[int] = []
    intensities: List[float] = []
    speakers: List[str] = []
    for n, utt in enumerate(utts):
        feats = utt.get("features") if isinstance(utt, dict) else None
        if not isinstance(feats, list) or not feats:
            raise DatasetError(f"utterance {n} has no feature list", path, line)
        width = d if d is not None else (len(rows[0]) if rows else len(feats))
        if len(feats) != width:
            raise DatasetError(
                f"utterance {n} of {conv_id!r} has {len(feats)} features, expected {width}",
                path,
                line,
            )
        try:
            rows.append([_as_float(x) for x in feats])
        except (TypeError, ValueError):
            raise DatasetError(
                f"utterance {n} of {conv_id!r} has a non-numeric feature", path, line
            )
        if "label" in utt:
            label = utt["label"]
            if not isinstance(label, int) or isinstance(label, bool):
                raise DatasetError(f"utterance {n} label {label!r} is not an integer", path, line)
            if label < 0:
                raise DatasetError(f"utterance {n} label {label} is negative", path, line)
            labels.append(label)
        elif "intensity" in utt:
            try:
                intensities.append(_as_float(utt["intensity"]))
            except (TypeError, ValueError):
                raise DatasetError(
                    f"utterance {n} intensity {utt['intensity']!r} is not a number", path, line
                )
        else:
            raise DatasetError(f"utterance {n} has neither label nor intensity", path, line)
        if "speaker" in utt:
            speakers.append(str(utt["speaker"]))

    if labels and intensities:
        raise DatasetError("conversation mixes labels and intensities", path, line)
    kind = CLASSIFY if labels else REGRESS
    if task is not None and kind != task:
        raise DatasetError(f"conversation targets do not match task {task!r}", path, line)
    features = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise DatasetError(f"non-finite feature in {conv_id!r}", path, line)
    return FeatureConversation(
        id=conv_id,
        features=features,
        labels=np.asarray(labels, dtype=np.int64) if labels else None,
        intensities=np.asarray(intensities, dtype=np.float64) if intensities else None,
        speakers=speakers if len(speakers) == len(rows) else None,
    )


def _check_counts(found: DatasetManifest, declared: DatasetManifest, source: str) -> None:
    checks = (
        ("task", found.task, declared.task),
        ("d", found.d, declared.d),
        ("conversations", found.conversations, declared.conversations),
        ("utterances", found.utterances, declared.utterances),
    )
    for name, actual, expected in checks:
        if expected is not None and actual != expected:
            raise DatasetError(f"{source} declares {name}={expected}, file has {actual}")
    if declared.n_class is not None and found.n_class is not None:
        if found.n_class > declared.n_class:
            raise DatasetError(
                f"{source} declares n_class={declared.n_class}, labels reach {found.n_class - 1}"
            )


def load_dataset(
    path: Union[str, Path], expected: Optional[DatasetManifest] = None
) -> Dataset:
    """Read and validate a dataset file.

    The sidecar manifest, when present, fixes the task, the dimension and
    the label range; declared counts must match the file exactly. Counts in
    ``expected`` are checked the same way.
    """
    path = Path(path)
    side = manifest_path(path)
    declared: Optional[DatasetManifest] = None
    if side.exists():
        try:
            declared = DatasetManifest.from_dict(json.loads(side.read_text()))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"unreadable manifest: {exc}", str(side))
    else:
        logger.debug("no manifest next to %s", path)

    d = declared.d if declared else (expected.d if expected else None)
    task = declared.task if declared else (expected.task if expected else None)
    n_class = declared.n_class if declared else (expected.n_class if expected else None)

    conversations: List[FeatureConversation] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc.msg}", str(path), line_no)
            conv = _parse_conversation(record, str(path), line_no, d, task)
            if d is None:
                d = conv.features.shape[1]
            if task is None:
                task = CLASSIFY if conv.labels is not None else REGRESS
            if conv.labels is not None and n_class is not None:
                bad = conv.labels[(conv.labels < 0) | (conv.labels >= n_class)]
                if bad.size:
                    raise DatasetError(
                        f"label {int(bad[0])} out of range [0, {n_class})", str(path), line_no
                    )
            conversations.append(conv)

    if not conversations:
        raise DatasetError("dataset contains no conversations", str(path))
    if task == CLASSIFY and n_class is None:
        n_class = int(max(int(c.labels.max()) for c in conversations)) + 1

    manifest = DatasetManifest(
        task=task,
        d=d,
        n_class=n_class if task == CLASSIFY else None,
        label_names=declared.label_names if declared else None,
        split=declared.split if declared else None,
        conversations=len(conversations),
        utterances=sum(len(c) for c in conversations),
        extra=dict(declared.extra) if declared else {},
    )
    if declared is not None:
        _check_counts(manifest, declared, str(side))
    if expected is not None:
        _check_counts(manifest, expected, "expected manifest")
    logger.info(
        "loaded %s: %d conversations, %d utterances", path, manifest.conversations, manifest.utterances
    )
    return Dataset(conversations=conversations, manifest=manifest)


def write_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write the JSON-lines file and its sidecar manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for conv in dataset.conversations:
            f.write(json.dumps(conv.to_record(), separators=(",", ":")) + "\n")
    manifest = dataset.manifest
    manifest.conversations = len(dataset.conversations)
    manifest.utterances = dataset.num_utterances
    manifest_path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Synthetic conversations
# ---------------------------------------------------------------------------
@dataclass
class LatentGeometry:
    """Class centers shared by every split of one synthetic dataset."""

    centers: np.ndarray  # (n_class, d)
    direction: np.ndarray  # (d,), unit vector used for intensities


def draw_geometry(rng: SeededRng, d: int, n_class: int, separation: float) -> LatentGeometry:
    if separation < 0:
        raise ValueError(f"separation must be >= 0, got {separation}")
    centers = separation * rng.normal(size=(n_class, d))
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    return LatentGeometry(centers=centers, direction=direction)


def synth_dataset(
    rng: SeededRng,
    n_conversations: int,
    turns: Tuple[int, int],
    d: int,
    n_class: int,
    task: str = CLASSIFY,
    separation: float = 5.0,
    shift_prob: float = 0.2,
    noise: float = 1.0,
    geometry: Optional[LatentGeometry] = None,
    split: Optional[str] = None,
) -> Dataset:
    """Conversations driven by a latent emotion state.

    Each conversation starts in a uniformly drawn class; between turns the
    state switches to a different class with probability ``shift_prob``.
    Features are the state's center plus Gaussian noise. Classification
    labels follow the state; regression intensities are the projection of
    the state's center on a fixed direction, scaled by 1/sqrt(d), plus noise.
    """
    lo, hi = turns
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid turns range {lo}..{hi}")
    if not 0.0 <= shift_prob <= 1.0:
        raise ValueError(f"shift_prob must be in [0, 1], got {shift_prob}")
    if n_class < 2:
        raise ValueError(f"need at least 2 latent classes, got {n_class}")
    if geometry is None:
        geometry = draw_geometry(rng, d, n_class, separation)

    prefix = f"synth-{split}" if split else "synth"
    conversations: List[FeatureConversation] = []
    for n in range(n_conversations):
        length = int(rng.integers(lo, hi + 1))
        states = np.zeros(length, dtype=np.int64)
        states[0] = int(rng.integers(0, n_class))
        for t in range(1, length):
            states[t] = states[t - 1]
            if rng.random() < shift_prob:
                step = int(rng.integers(1, n_class))
                states[t] = (states[t - 1] + step) % n_class
        features = geometry.centers[states] + noise * rng.normal(size=(length, d))
        conv = FeatureConversation(
            id=f"{prefix}-{n:04d}",
            features=features,
            speakers=[SPEAKERS[t % 2] for t in range(length)],
        )
        if task == CLASSIFY:
            conv.labels = states
        else:
            level = geometry.centers[states] @ geometry.direction / np.sqrt(d)
            conv.intensities = level + 0.1 * noise * rng.normal(size=length)
        conversations.append(conv)

    manifest = DatasetManifest(
        task=task,
        d=d,
        n_class=n_class if task == CLASSIFY else None,
        label_names=[f"class{c}" for c in range(n_class)] if task == CLASSIFY else None,
        split=split,
        conversations=len(conversations),
        utterances=sum(len(c) for c in conversations),
    )
    return Dataset(conversations=conversations, manifest=manifest)


def nearest_centroid_accuracy(dataset: Dataset, geometry: LatentGeometry) -> float:
    """Accuracy of assigning each utterance to its closest class center."""
    correct = 0
    total = 0
    for conv in dataset.conversations:
        dist = np.linalg.norm(conv.features[:, None, :] - geometry.centers[None], axis=2)
        correct += int(np.sum(np.argmin(dist, axis=1) == conv.labels))
        total += len(conv)
    return correct / total


def stack_targets(conversations: Sequence[FeatureConversation]) -> np.ndarray:
    return np.concatenate([c.targets for c in conversations])
