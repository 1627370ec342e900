"""Manifest I/O, participant-disjoint fold splitting, the balanced
mini-batch sampler, and sample loading.

manifest.tsv: one sample per line, tab-separated:
    participant_id  jump_id  jump_type(cmj|drop)  velocity(6dp)
    left_path  center_path  right_path
folds.tsv: participant_id  fold(0|1|2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import vten
from .errors import ConfigError, InputError, ParseError

VIEWS = ("left", "center", "right")  # fixed order: manifest columns and fusion concat
JUMP_TYPES = ("cmj", "drop")
VIEW_SELECTIONS = ("left", "right", "center", "combined")


def selection_views(selection: str) -> tuple[str, ...]:
    """Views a selection requires, in canonical concat order."""
    if selection == "combined":
        return VIEWS
    if selection not in VIEWS:
        raise ConfigError(f"unknown view selection {selection!r}")
    return (selection,)


@dataclass(frozen=True)
class SampleRecord:
    participant_id: int
    jump_id: int
    jump_type: str
    velocity: float
    paths: dict  # view -> path relative to the dataset root


@dataclass
class VideoSample:
    """One jump: per-view frame stacks plus the scalar velocity label."""

    participant_id: int
    jump_id: int
    jump_type: str
    views: dict  # view -> (T, S, S, ch) float array
    velocity: float


@dataclass
class DatasetIndex:
    root: Path
    records: tuple[SampleRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def participants(self) -> frozenset[int]:
        return frozenset(r.participant_id for r in self.records)

    def labels(self, ids=None) -> np.ndarray:
        if ids is None:
            ids = range(len(self.records))
        return np.array([self.records[i].velocity for i in ids], dtype=np.float64)

    def ids_for_participants(self, participants) -> list[int]:
        wanted = frozenset(participants)
        return [i for i, r in enumerate(self.records) if r.participant_id in wanted]


def write_manifest(index: DatasetIndex, path) -> None:
    lines = []
    for r in index.records:
        lines.append("\t".join([
            str(r.participant_id),
            str(r.jump_id),
            r.jump_type,
            f"{r.velocity:.6f}",
            r.paths["left"],
            r.paths["center"],
            r.paths["right"],
        ]))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_manifest(path) -> DatasetIndex:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    root = path.parent
    records = []
    seen = set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) != 7:
            raise ParseError(path, lineno, f"expected 7 tab-separated fields, got {len(fields)}")
        try:
            pid = int(fields[0])
            jid = int(fields[1])
        except ValueError as exc:
            raise ParseError(path, lineno, f"bad integer id: {exc}") from None
        jtype = fields[2]
        if jtype not in JUMP_TYPES:
            raise ParseError(path, lineno, f"unknown jump type {jtype!r}")
        try:
            vel = float(fields[3])
        except ValueError:
            raise ParseError(path, lineno, f"bad velocity {fields[3]!r}") from None
        if not math.isfinite(vel):
            raise ParseError(path, lineno, f"non-finite velocity {fields[3]!r}")
        if (pid, jid) in seen:
            raise ParseError(path, lineno, f"duplicate (participant, jump) = ({pid}, {jid})")
        seen.add((pid, jid))
        paths = dict(zip(VIEWS, fields[4:7]))
        for view, rel in paths.items():
            if not (root / rel).is_file():
                raise ParseError(path, lineno, f"{view} file missing: {rel}")
        records.append(SampleRecord(pid, jid, jtype, vel, paths))
    return DatasetIndex(root=root, records=tuple(records))


def load_sample(index: DatasetIndex, sample_id: int,
                views: str = "combined") -> VideoSample:
    """Load the frame stacks a view selection needs, validating shape agreement."""
    if not 0 <= sample_id < len(index.records):
        raise InputError(f"sample id {sample_id} out of range (n={len(index.records)})")
    rec = index.records[sample_id]
    loaded = {}
    shape = None
    for view in selection_views(views):
        fpath = index.root / rec.paths[view]
        if not fpath.is_file():
            raise InputError(f"{view} view file missing: {fpath}")
        arr = vten.read(fpath)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise InputError(
                f"view shape mismatch for sample {sample_id}: "
                f"{view} has {arr.shape}, expected {shape}"
            )
        loaded[view] = arr
    return VideoSample(rec.participant_id, rec.jump_id, rec.jump_type,
                       loaded, rec.velocity)


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[frozenset, ...]

    def __post_init__(self):
        all_ids = [p for f in self.folds for p in f]
        if len(all_ids) != len(set(all_ids)):
            raise ConfigError("folds are not pairwise disjoint")
        sizes = [len(f) for f in self.folds]
        if max(sizes) - min(sizes) > 1:
            raise ConfigError(f"fold sizes {sizes} differ by more than 1")

    @property
    def participants(self) -> frozenset:
        return frozenset().union(*self.folds)

    def train_test(self, k: int) -> tuple[frozenset, frozenset]:
        test = self.folds[k]
        train = frozenset().union(*(f for i, f in enumerate(self.folds) if i != k))
        return train, test


def split_folds(participants, k: int = 3, seed: int = 0) -> FoldSplit:
    """Seeded shuffle then round-robin assignment; sizes differ by at most 1."""
    ids = sorted(participants)
    if len(ids) < k:
        raise InputError(f"need at least {k} participants, got {len(ids)}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5,)))
    order = [ids[i] for i in rng.permutation(len(ids))]
    return FoldSplit(folds=tuple(frozenset(order[i::k]) for i in range(k)))


def write_folds(split: FoldSplit, path) -> None:
    lines = []
    for fold, members in enumerate(split.folds):
        for pid in sorted(members):
            lines.append(f"{pid}\t{fold}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# balanced sampler
# ---------------------------------------------------------------------------


@dataclass
class SamplerConfig:
    bins: int = 10
    batch: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.bins < 1 or self.batch < 1:
            raise ConfigError(f"bins and batch must be >= 1, got {self.bins}, {self.batch}")


def label_bins(labels: np.ndarray, bins: int) -> list[np.ndarray]:
    """Equal-width partition of [min, max]; returns per-bin position arrays
    (non-empty bins only). A zero-width label range degenerates to one bin."""
    labels = np.asarray(labels, dtype=np.float64)
    lo, hi = float(labels.min()), float(labels.max())
    if hi <= lo:
        return [np.arange(labels.size)]
    which = np.minimum(((labels - lo) / (hi - lo) * bins).astype(int), bins - 1)
    return [np.flatnonzero(which == b) for b in range(bins)
            if np.any(which == b)]


def balanced_batches(ids, labels, cfg: SamplerConfig,
                     steps: int) -> Iterator[list[int]]:
    """Yield ``steps`` batches of sample ids, drawn with replacement:
    uniformly random non-empty label bin, then uniform within the bin."""
    ids = list(ids)
    if not ids:
        raise InputError("balanced_batches: empty training split")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size != len(ids):
        raise InputError(
            f"balanced_batches: {len(ids)} ids but {labels.size} labels"
        )
    bins = label_bins(labels, cfg.bins)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(9,)))
    for _ in range(steps):
        batch = []
        for _ in range(cfg.batch):
            b = bins[rng.integers(len(bins))]
            batch.append(ids[int(b[rng.integers(b.size)])])
        yield batch
