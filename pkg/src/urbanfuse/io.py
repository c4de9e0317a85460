"""On-disk formats, manifest handling and stratified splitting.

Feature files are binary, little-endian: magic ``MMLU``, u32 version, u32
dim, u32 count, then count*dim IEEE-754 f32 values row-major. Manifests are
tab-separated text, one urban-object per line; the label vocabulary lives in
a sibling text file, one class name per line.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"MMLU"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")

#: Default 16-way landuse vocabulary for urban-object classification.
LANDUSE_CLASSES = (
    "educational",
    "hospital",
    "religious",
    "shop",
    "cemetery",
    "forest",
    "park",
    "heritage",
    "sports",
    "government",
    "post office",
    "parking",
    "fuel",
    "marina",
    "hotel",
    "industrial",
)


class FeatureFileError(ValueError):
    """Malformed or inconsistent feature file."""


class ManifestError(ValueError):
    """Manifest or vocabulary fails validation."""


class SplitError(ValueError):
    """A stratified split cannot be built from the given manifest."""


def write_feature_file(vectors, path) -> None:
    """Write a batch of equally-sized feature vectors to ``path``.

    ``vectors`` is a 2-D array-like (count x dim) or a list of 1-D vectors,
    all of the same dimension. Values are stored as little-endian f32, so
    ``read_feature_file(write_feature_file(x)) == x`` holds bit-exactly for
    f32 input.
    """
    if isinstance(vectors, np.ndarray):
        arr = vectors
    else:
        vectors = list(vectors)
        dims = {np.asarray(v).shape for v in vectors}
        if len(dims) > 1:
            raise FeatureFileError(f"vectors disagree on dimension: {sorted(dims)}")
        arr = np.asarray(vectors, dtype=np.float32)
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float32))
    if arr.ndim != 2:
        raise FeatureFileError(f"expected 2-D vector batch, got ndim={arr.ndim}")
    count, dim = arr.shape
    if count < 1 or dim < 1:
        raise FeatureFileError(f"empty feature batch (count={count}, dim={dim})")
    if not np.isfinite(arr).all():
        raise FeatureFileError("non-finite values in feature batch")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, dim, count))
        fh.write(arr.astype("<f4", copy=False).tobytes())


def read_feature_file(path) -> np.ndarray:
    """Read a feature file back as a float32 array of shape (count, dim)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FeatureFileError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, dim, count = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FeatureFileError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    if dim < 1 or count < 1:
        raise FeatureFileError(f"{path}: invalid header (dim={dim}, count={count})")
    expected = _HEADER.size + 4 * dim * count
    if len(data) < expected:
        raise FeatureFileError(f"{path}: truncated payload ({len(data)} < {expected} bytes)")
    if len(data) > expected:
        raise FeatureFileError(f"{path}: {len(data) - expected} trailing bytes")
    arr = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
    if not np.isfinite(arr).all():
        raise FeatureFileError(f"{path}: non-finite values in payload")
    return arr.copy()


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered class names; a label index is a position in ``names``."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 2:
            raise ManifestError(f"vocabulary needs >= 2 classes, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise ManifestError("duplicate class names in vocabulary")
        for name in self.names:
            if not name or "\t" in name or "\n" in name:
                raise ManifestError(f"invalid class name {name!r}")

    def __len__(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ManifestError(f"unknown label {name!r}") from None


@dataclass(frozen=True)
class UrbanObjectRecord:
    """One urban-object: an overhead vector plus n >= 0 ground-view vectors."""

    object_id: str
    label: int
    overhead: np.ndarray  # (dim_overhead,) float32
    ground_views: np.ndarray  # (n_views, dim_ground) float32; n_views == 0 marks missing modality

    @property
    def n_views(self) -> int:
        return self.ground_views.shape[0]


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[UrbanObjectRecord, ...]
    vocabulary: LabelVocabulary
    dim_overhead: int
    dim_ground: int | None  # None when no record carries ground views

    @property
    def num_classes(self) -> int:
        return len(self.vocabulary)

    def record_by_id(self, object_id: str) -> UrbanObjectRecord:
        for rec in self.records:
            if rec.object_id == object_id:
                return rec
        raise KeyError(object_id)


def load_vocabulary(path) -> LabelVocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    names = tuple(line.strip() for line in lines if line.strip())
    return LabelVocabulary(names)


def write_vocabulary(vocabulary: LabelVocabulary, path) -> None:
    Path(path).write_text("".join(f"{name}\n" for name in vocabulary.names), encoding="utf-8")


def load_manifest(manifest_path, vocab_path) -> DatasetManifest:
    """Parse and fully validate a manifest plus its vocabulary.

    Feature paths are resolved relative to the manifest's directory. Every
    referenced file is read eagerly so dimension mismatches surface here,
    naming the offending object, rather than mid-experiment.
    """
    manifest_path = Path(manifest_path)
    vocabulary = load_vocabulary(vocab_path)
    base = manifest_path.parent

    records: list[UrbanObjectRecord] = []
    seen: set[str] = set()
    dim_overhead: int | None = None
    dim_ground: int | None = None

    for lineno, raw in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ManifestError(f"line {lineno}: expected 4 tab-separated fields, got {len(fields)}")
        object_id, class_name, overhead_path, ground_field = fields
        if not object_id:
            raise ManifestError(f"line {lineno}: empty object_id")
        if object_id in seen:
            raise ManifestError(f"line {lineno}: duplicate object_id {object_id!r}")
        seen.add(object_id)
        try:
            label = vocabulary.index_of(class_name)
        except ManifestError:
            raise ManifestError(f"line {lineno}: unknown label {class_name!r} for object {object_id!r}") from None

        try:
            overhead_batch = read_feature_file(base / overhead_path)
        except (OSError, FeatureFileError) as exc:
            raise ManifestError(f"object {object_id!r}: overhead feature file unreadable: {exc}") from exc
        if overhead_batch.shape[0] != 1:
            raise ManifestError(
                f"object {object_id!r}: overhead file holds {overhead_batch.shape[0]} vectors, expected 1"
            )
        overhead = overhead_batch[0]
        if dim_overhead is None:
            dim_overhead = overhead.shape[0]
        elif overhead.shape[0] != dim_overhead:
            raise ManifestError(
                f"object {object_id!r}: overhead dim {overhead.shape[0]} != dataset dim {dim_overhead}"
            )

        ground_paths = [p for p in ground_field.split(";") if p] if ground_field else []
        batches = []
        for gp in ground_paths:
            try:
                batches.append(read_feature_file(base / gp))
            except (OSError, FeatureFileError) as exc:
                raise ManifestError(f"object {object_id!r}: ground feature file unreadable: {exc}") from exc
        if batches:
            dims = {b.shape[1] for b in batches}
            if len(dims) > 1:
                raise ManifestError(f"object {object_id!r}: ground files disagree on dim: {sorted(dims)}")
            ground = np.concatenate(batches, axis=0)
            if dim_ground is None:
                dim_ground = ground.shape[1]
            elif ground.shape[1] != dim_ground:
                raise ManifestError(
                    f"object {object_id!r}: ground dim {ground.shape[1]} != dataset dim {dim_ground}"
                )
        else:
            ground = np.zeros((0, dim_ground if dim_ground is not None else 0), dtype=np.float32)

        records.append(UrbanObjectRecord(object_id, label, overhead, ground))

    if not records:
        raise ManifestError(f"{manifest_path}: no records")
    assert dim_overhead is not None
    # records parsed before dim_ground was known get their empty arrays reshaped
    if dim_ground is not None:
        records = [
            rec
            if rec.n_views > 0 or rec.ground_views.shape[1] == dim_ground
            else UrbanObjectRecord(rec.object_id, rec.label, rec.overhead, np.zeros((0, dim_ground), np.float32))
            for rec in records
        ]
    return DatasetManifest(tuple(records), vocabulary, dim_overhead, dim_ground)


@dataclass(frozen=True)
class SplitAssignment:
    """Exhaustive, disjoint train/test assignment of object ids."""

    assignment: dict[str, str]  # object_id -> "train" | "test"
    seed: int

    def partition(self, manifest: DatasetManifest):
        """Split manifest records into (train, test) lists, manifest order."""
        train, test = [], []
        for rec in manifest.records:
            side = self.assignment.get(rec.object_id)
            if side == "train":
                train.append(rec)
            elif side == "test":
                test.append(rec)
            else:
                raise SplitError(f"object {rec.object_id!r} missing from split assignment")
        return train, test


def stratified_split(manifest: DatasetManifest, seed: int, train_fraction: float = 0.8) -> SplitAssignment:
    """Per-class random split: floor(train_fraction * n_c) train objects, min 1.

    Deterministic for a given (manifest, seed); classes are processed in
    label order and ids are sorted before shuffling, so record order in the
    manifest does not matter.
    """
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train_fraction must be in (0, 1), got {train_fraction}")
    by_class: dict[int, list[str]] = {}
    for rec in manifest.records:
        by_class.setdefault(rec.label, []).append(rec.object_id)

    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        if len(ids) < 2:
            name = manifest.vocabulary.names[label]
            raise SplitError(f"class {name!r} has {len(ids)} object(s); need at least 2 to split")
        perm = rng.permutation(len(ids))
        n_train = max(1, math.floor(train_fraction * len(ids)))
        for rank, idx in enumerate(perm):
            assignment[ids[idx]] = "train" if rank < n_train else "test"
    return SplitAssignment(assignment, seed)


def write_split(split: SplitAssignment, path) -> None:
    lines = [f"#seed={split.seed}\n"]
    for object_id in sorted(split.assignment):
        lines.append(f"{object_id}\t{split.assignment[object_id]}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_split(path) -> SplitAssignment:
    seed = 0
    assignment: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#seed="):
            seed = int(line[len("#seed="):])
            continue
        fields = line.split("\t")
        if len(fields) != 2 or fields[1] not in ("train", "test"):
            raise SplitError(f"line {lineno}: malformed split entry {line!r}")
        if fields[0] in assignment:
            raise SplitError(f"line {lineno}: duplicate object_id {fields[0]!r}")
        assignment[fields[0]] = fields[1]
    if not assignment:
        raise SplitError(f"{path}: empty split file")
    return SplitAssignment(assignment, seed)
