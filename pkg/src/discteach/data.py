"""Discrete data model: schemas, multi-hot instances, flips, distances,
synthetic generation and (de)serialization.

An instance is an M x N binary matrix: row m is categorical feature m, and
bit (m, n) = 1 means nominal value n of that feature is present. All types
here are immutable after construction; the operations are pure functions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import (
    ConfigError,
    DatasetParseError,
    EncodingModeError,
    FlipError,
    LabelError,
    SchemaMismatchError,
)

INSERT = "ins"  # 0 -> 1
DELETE = "del"  # 1 -> 0


class EncodingMode(str, Enum):
    MULTI_HOT = "multi_hot"
    STRICT_ONE_HOT = "one_hot"


@dataclass(frozen=True)
class DatasetSchema:
    """Shape contract shared by every instance of a dataset."""

    num_features: int
    arity: int
    num_classes: int
    feature_names: tuple[str, ...] | None = None
    encoding_mode: EncodingMode = EncodingMode.MULTI_HOT

    def __post_init__(self):
        if self.num_features < 1:
            raise ConfigError(f"num_features must be >= 1, got {self.num_features}")
        if self.arity < 1:
            raise ConfigError(f"arity must be >= 1, got {self.arity}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.feature_names is not None:
            names = tuple(self.feature_names)
            if len(names) != self.num_features:
                raise ConfigError(
                    f"{len(names)} feature names for {self.num_features} features"
                )
            object.__setattr__(self, "feature_names", names)
        if not isinstance(self.encoding_mode, EncodingMode):
            object.__setattr__(self, "encoding_mode", EncodingMode(self.encoding_mode))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_features, self.arity)

    @property
    def input_dim(self) -> int:
        return self.num_features * self.arity

    @property
    def strict_one_hot(self) -> bool:
        return self.encoding_mode is EncodingMode.STRICT_ONE_HOT


class Flip(NamedTuple):
    """One bit toggle: insert turns a 0 on, delete turns a 1 off."""

    feature: int
    value: int
    kind: str  # INSERT or DELETE


@dataclass(frozen=True)
class FlipList:
    """An ordered set of flips with no repeated position."""

    flips: tuple[Flip, ...]

    def __post_init__(self):
        flips = tuple(Flip(*f) for f in self.flips)
        seen: set[tuple[int, int]] = set()
        for f in flips:
            if f.kind not in (INSERT, DELETE):
                raise FlipError(f"unknown flip kind {f.kind!r}")
            if (f.feature, f.value) in seen:
                raise FlipError(f"duplicate flip at position {(f.feature, f.value)}")
            seen.add((f.feature, f.value))
        object.__setattr__(self, "flips", flips)

    def __len__(self) -> int:
        return len(self.flips)

    def __iter__(self) -> Iterator[Flip]:
        return iter(self.flips)

    def reversed(self) -> "FlipList":
        """The flip list that undoes this one."""
        swap = {INSERT: DELETE, DELETE: INSERT}
        return FlipList(tuple(Flip(f.feature, f.value, swap[f.kind]) for f in self.flips))

    def to_json(self) -> list[list]:
        return [[f.feature, f.value, f.kind] for f in self.flips]

    @classmethod
    def from_json(cls, raw) -> "FlipList":
        return cls(tuple(Flip(int(m), int(n), str(k)) for m, n, k in raw))


EMPTY_FLIPS = FlipList(())


@dataclass(frozen=True, eq=False)
class Instance:
    """One discrete sample: an M x N binary matrix bound to its schema."""

    schema: DatasetSchema
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.shape != self.schema.shape:
            raise SchemaMismatchError(
                f"bits shape {bits.shape} does not match schema {self.schema.shape}"
            )
        if not np.isin(bits, (0, 1)).all():
            raise ConfigError("instance bits must be 0 or 1")
        if self.schema.strict_one_hot:
            rows = bits.sum(axis=1)
            if not (rows == 1).all():
                bad = int(np.flatnonzero(rows != 1)[0])
                raise EncodingModeError(
                    f"strict one-hot violated at feature {bad} (row sum {int(rows[bad])})"
                )
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_active(cls, schema: DatasetSchema, pairs: Iterable[tuple[int, int]]) -> "Instance":
        bits = np.zeros(schema.shape, dtype=np.uint8)
        for m, n in pairs:
            bits[m, n] = 1
        return cls(schema, bits)

    def active_positions(self) -> list[tuple[int, int]]:
        ms, ns = np.nonzero(self.bits)
        return list(zip(ms.tolist(), ns.tolist()))

    def flat_float(self) -> np.ndarray:
        """Row-major float64 view used as model input."""
        return self.bits.reshape(-1).astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return self.schema == other.schema and np.array_equal(self.bits, other.bits)

    def __ne__(self, other) -> bool:
        eq = self.__eq__(other)
        return NotImplemented if eq is NotImplemented else not eq


@dataclass(frozen=True)
class Provenance:
    """Whether an item is an original sample or a perturbed copy of one."""

    kind: str  # "clean" or "perturbed"
    origin_id: int | None = None
    flips: FlipList | None = None

    @classmethod
    def clean(cls) -> "Provenance":
        return cls("clean")

    @classmethod
    def perturbed(cls, origin_id: int, flips: FlipList) -> "Provenance":
        return cls("perturbed", origin_id, flips)

    @property
    def is_perturbed(self) -> bool:
        return self.kind == "perturbed"

    def __post_init__(self):
        if self.kind not in ("clean", "perturbed"):
            raise ConfigError(f"unknown provenance kind {self.kind!r}")
        if self.kind == "perturbed" and (self.origin_id is None or self.flips is None):
            raise ConfigError("perturbed provenance needs origin_id and flips")


@dataclass(frozen=True)
class LabeledInstance:
    id: int
    instance: Instance
    label: int
    provenance: Provenance = field(default_factory=Provenance.clean)

    def __post_init__(self):
        c = self.instance.schema.num_classes
        if not 0 <= self.label < c:
            raise LabelError(f"label {self.label} out of range for {c} classes")


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered, id-unique collection of labeled instances."""

    schema: DatasetSchema
    items: tuple[LabeledInstance, ...]

    def __post_init__(self):
        items = tuple(self.items)
        ids = [it.id for it in items]
        if len(set(ids)) != len(ids):
            raise ConfigError("dataset ids must be unique")
        for it in items:
            if it.instance.schema != self.schema:
                raise SchemaMismatchError(f"item {it.id} has a different schema")
        object.__setattr__(self, "items", items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[LabeledInstance]:
        return iter(self.items)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.schema == other.schema and self.items == other.items

    @cached_property
    def _by_id(self) -> dict[int, LabeledInstance]:
        return {it.id: it for it in self.items}

    def by_id(self, item_id: int) -> LabeledInstance:
        return self._by_id[item_id]

    def has_id(self, item_id: int) -> bool:
        return item_id in self._by_id

    def ids(self) -> list[int]:
        return [it.id for it in self.items]

    def next_id(self) -> int:
        return max((it.id for it in self.items), default=-1) + 1

    @cached_property
    def stacked_bits(self) -> np.ndarray:
        """(len, M, N) uint8 stack, read-only; empty-safe."""
        if not self.items:
            arr = np.zeros((0,) + self.schema.shape, dtype=np.uint8)
        else:
            arr = np.stack([it.instance.bits for it in self.items])
        arr.flags.writeable = False
        return arr

    @cached_property
    def labels(self) -> np.ndarray:
        arr = np.array([it.label for it in self.items], dtype=np.int64)
        arr.flags.writeable = False
        return arr


@dataclass(frozen=True)
class TargetSpec:
    """The samples whose predictions the teacher wants to control.

    For tampering, target_label is the attacker-chosen class; for
    improvement it must equal the ground-truth original_label.
    """

    targets: tuple["TargetEntry", ...]
    task_kind: str  # "tampering" or "improvement"

    def __post_init__(self):
        if self.task_kind not in ("tampering", "improvement"):
            raise ConfigError(f"unknown task kind {self.task_kind!r}")
        targets = tuple(self.targets)
        if not targets:
            raise ConfigError("target spec must contain at least one target")
        c = targets[0].instance.schema.num_classes
        for t in targets:
            if not 0 <= t.target_label < c:
                raise LabelError(f"target label {t.target_label} out of range")
            if self.task_kind == "improvement":
                if t.original_label is None or t.original_label != t.target_label:
                    raise ConfigError(
                        "improvement targets must carry target_label == original_label"
                    )
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def schema(self) -> DatasetSchema:
        return self.targets[0].instance.schema

    def target_labels(self) -> list[int]:
        return [t.target_label for t in self.targets]


@dataclass(frozen=True)
class TargetEntry:
    instance: Instance
    target_label: int
    original_label: int | None = None


def hamming_diff(a: Instance, b: Instance) -> int:
    """Number of bit positions where a and b differ."""
    if a.schema != b.schema:
        raise SchemaMismatchError("hamming_diff requires a shared schema")
    return int(np.count_nonzero(a.bits != b.bits))


def jaccard_distance(a: Instance, b: Instance) -> float:
    """1 - |A & B| / |A | B| over active positions; 0 when both are empty."""
    if a.schema != b.schema:
        raise SchemaMismatchError("jaccard_distance requires a shared schema")
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 0.0
    return 1.0 - inter / union


def diff_flips(origin: Instance, perturbed: Instance) -> FlipList:
    """The net flip list taking origin to perturbed (replayable via modify)."""
    if origin.schema != perturbed.schema:
        raise SchemaMismatchError("diff_flips requires a shared schema")
    flips = []
    ms, ns = np.nonzero(origin.bits != perturbed.bits)
    for m, n in zip(ms.tolist(), ns.tolist()):
        kind = INSERT if origin.bits[m, n] == 0 else DELETE
        flips.append(Flip(m, n, kind))
    return FlipList(tuple(flips))


def modify(x: Instance, flips: FlipList) -> Instance:
    """Apply a flip list, returning a new instance; x is untouched."""
    bits = np.array(x.bits, dtype=np.uint8)
    for f in flips:
        if not (0 <= f.feature < x.schema.num_features and 0 <= f.value < x.schema.arity):
            raise FlipError(f"flip position {(f.feature, f.value)} outside schema")
        current = int(bits[f.feature, f.value])
        if f.kind == INSERT and current != 0:
            raise FlipError(f"insert at already-active bit {(f.feature, f.value)}")
        if f.kind == DELETE and current != 1:
            raise FlipError(f"delete at inactive bit {(f.feature, f.value)}")
        bits[f.feature, f.value] ^= 1
    if x.schema.strict_one_hot:
        _check_one_hot_pairs(flips)
    return Instance(x.schema, bits)


def _check_one_hot_pairs(flips: FlipList) -> None:
    by_row: dict[int, list[str]] = {}
    for f in flips:
        by_row.setdefault(f.feature, []).append(f.kind)
    for row, kinds in by_row.items():
        if sorted(kinds) != [DELETE, INSERT]:
            raise EncodingModeError(
                f"strict one-hot requires one delete plus one insert per row; "
                f"row {row} got {kinds}"
            )


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Seeded generator settings.

    Each class c draws bits from an independent Bernoulli profile p_c[m, n].
    Profiles are built from `separation`: a fraction (1 - separation) of the
    features share one preferred value across classes, the rest give every
    class its own value. Explicit `profiles` (C, M, N) override that
    construction. `noise_rate` flips bits after sampling.

    Candidate targets are emitted alongside the dataset: `tamper_candidates`
    near-boundary draws that a profile-centroid rule still classifies
    correctly, and optionally an ambiguous "confusion region" for the
    improvement task (`improve_targets` true-label targets plus
    `confusion_train` training samples deliberately labeled with the decoy
    class, which makes a clean model misclassify that region).
    """

    num_features: int
    arity: int
    num_classes: int = 2
    samples_per_class: int | tuple[int, ...] = 100
    separation: float = 1.0
    noise_rate: float = 0.0
    p_high: float = 0.9
    p_low: float = 0.05
    encoding_mode: EncodingMode = EncodingMode.MULTI_HOT
    profiles: tuple | None = None  # nested (C, M, N) floats
    profile_seed: int | None = None  # share class profiles across draws
    tamper_candidates: int = 8
    tamper_lean: float = 0.3
    improve_targets: int = 0
    confusion_train: int = 0
    confusion_lean: float = 0.65
    confusion_true_class: int = 0
    confusion_decoy_class: int = 1

    def __post_init__(self):
        for name in ("separation", "noise_rate", "p_high", "p_low"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 <= self.tamper_lean < 0.5:
            raise ConfigError("tamper_lean must lie in [0, 0.5)")
        if not 0.0 <= self.confusion_lean <= 1.0:
            raise ConfigError("confusion_lean must lie in [0, 1]")
        spc = self.samples_per_class
        if isinstance(spc, int):
            spc = (spc,) * self.num_classes
        else:
            spc = tuple(int(s) for s in spc)
        if len(spc) != self.num_classes:
            raise ConfigError("samples_per_class length must equal num_classes")
        if any(s < 1 for s in spc):
            raise ConfigError("samples_per_class entries must be >= 1")
        object.__setattr__(self, "samples_per_class", spc)
        if self.profiles is not None:
            arr = np.asarray(self.profiles, dtype=np.float64)
            want = (self.num_classes, self.num_features, self.arity)
            if arr.shape != want:
                raise ConfigError(f"profiles shape {arr.shape}, expected {want}")
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ConfigError("profile probabilities must lie in [0, 1]")
        if self.improve_targets or self.confusion_train:
            for cls_ in (self.confusion_true_class, self.confusion_decoy_class):
                if not 0 <= cls_ < self.num_classes:
                    raise ConfigError(f"confusion class {cls_} out of range")
            if self.confusion_true_class == self.confusion_decoy_class:
                raise ConfigError("confusion classes must differ")

    def schema(self) -> DatasetSchema:
        return DatasetSchema(
            num_features=self.num_features,
            arity=self.arity,
            num_classes=self.num_classes,
            encoding_mode=self.encoding_mode,
        )


@dataclass(frozen=True)
class CandidatePool:
    """Natural target candidates emitted by the generator.

    `tampering` holds correctly-classified-by-construction samples (their
    label is the construction class); `improvement` holds the ambiguous
    confusion-region samples with their true label.
    """

    tampering: tuple[LabeledInstance, ...]
    improvement: tuple[LabeledInstance, ...]


def class_profiles(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-class Bernoulli activation profiles, shape (C, M, N)."""
    if cfg.profiles is not None:
        return np.asarray(cfg.profiles, dtype=np.float64)
    c, m, n = cfg.num_classes, cfg.num_features, cfg.arity
    shared_count = int(round((1.0 - cfg.separation) * m))
    shared = set(rng.permutation(m)[:shared_count].tolist())
    prof = np.full((c, m, n), cfg.p_low, dtype=np.float64)
    for feat in range(m):
        if feat in shared:
            v = int(rng.integers(n))
            prof[:, feat, v] = cfg.p_high
        else:
            perm = rng.permutation(n)
            for cls_ in range(c):
                prof[cls_, feat, int(perm[cls_ % n])] = cfg.p_high
    return prof


def _draw_bits(profile: np.ndarray, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    m, n = profile.shape
    if cfg.encoding_mode is EncodingMode.STRICT_ONE_HOT:
        bits = np.zeros((m, n), dtype=np.uint8)
        for feat in range(m):
            w = profile[feat] / profile[feat].sum()
            v = int(rng.choice(n, p=w))
            if cfg.noise_rate > 0 and rng.random() < cfg.noise_rate:
                v = int(rng.integers(n))
            bits[feat, v] = 1
        return bits
    bits = (rng.random((m, n)) < profile).astype(np.uint8)
    if cfg.noise_rate > 0:
        flip = rng.random((m, n)) < cfg.noise_rate
        bits ^= flip.astype(np.uint8)
    return bits


def profile_centroid_label(bits: np.ndarray, profiles: np.ndarray) -> int:
    """Nearest-profile rule: argmin squared distance to expected bit values."""
    d = ((profiles - bits.astype(np.float64)) ** 2).sum(axis=(1, 2))
    return int(np.argmin(d))


def synth_generate(cfg: SynthConfig, seed: int) -> tuple[Dataset, CandidatePool]:
    """Generate a dataset and target candidates; deterministic per seed.

    With profile_seed set, the class profiles come from their own stream,
    so several draws (e.g. a train/eval pair) share one class geometry.
    """
    rng = np.random.default_rng(seed)
    schema = cfg.schema()
    profile_rng = rng if cfg.profile_seed is None else np.random.default_rng(cfg.profile_seed)
    profiles = class_profiles(cfg, profile_rng)

    items: list[LabeledInstance] = []
    next_id = 0
    for cls_ in range(cfg.num_classes):
        for _ in range(cfg.samples_per_class[cls_]):
            inst = Instance(schema, _draw_bits(profiles[cls_], cfg, rng))
            items.append(LabeledInstance(next_id, inst, cls_))
            next_id += 1

    a, b = cfg.confusion_true_class, cfg.confusion_decoy_class
    if cfg.confusion_train:
        mix = (1.0 - cfg.confusion_lean) * profiles[a] + cfg.confusion_lean * profiles[b]
        for _ in range(cfg.confusion_train):
            inst = Instance(schema, _draw_bits(mix, cfg, rng))
            items.append(LabeledInstance(next_id, inst, b))  # deliberately mislabeled
            next_id += 1

    dataset = Dataset(schema, tuple(items))

    tampering: list[LabeledInstance] = []
    for j in range(cfg.tamper_candidates):
        cls_ = j % cfg.num_classes
        others = [c for c in range(cfg.num_classes) if c != cls_]
        toward = others[int(rng.integers(len(others)))]
        mix = (1.0 - cfg.tamper_lean) * profiles[cls_] + cfg.tamper_lean * profiles[toward]
        bits = _draw_bits(mix, cfg, rng)
        for _ in range(50):
            if profile_centroid_label(bits, profiles) == cls_:
                break
            bits = _draw_bits(mix, cfg, rng)
        else:
            bits = _draw_bits(profiles[cls_], cfg, rng)
        tampering.append(LabeledInstance(next_id, Instance(schema, bits), cls_))
        next_id += 1

    improvement: list[LabeledInstance] = []
    if cfg.improve_targets:
        mix = (1.0 - cfg.confusion_lean) * profiles[a] + cfg.confusion_lean * profiles[b]
        for _ in range(cfg.improve_targets):
            inst = Instance(schema, _draw_bits(mix, cfg, rng))
            improvement.append(LabeledInstance(next_id, inst, a))
            next_id += 1

    return dataset, CandidatePool(tuple(tampering), tuple(improvement))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _schema_to_json(schema: DatasetSchema) -> dict:
    return {
        "m": schema.num_features,
        "n": schema.arity,
        "c": schema.num_classes,
        "mode": schema.encoding_mode.value,
        "names": list(schema.feature_names) if schema.feature_names else None,
    }


def _schema_from_json(raw: dict) -> DatasetSchema:
    try:
        return DatasetSchema(
            num_features=int(raw["m"]),
            arity=int(raw["n"]),
            num_classes=int(raw["c"]),
            feature_names=tuple(raw["names"]) if raw.get("names") else None,
            encoding_mode=EncodingMode(raw.get("mode", "multi_hot")),
        )
    except (KeyError, ValueError, ConfigError) as exc:
        raise DatasetParseError(f"bad schema block: {exc}") from exc


def _provenance_to_json(p: Provenance):
    if not p.is_perturbed:
        return "clean"
    return {"origin_id": p.origin_id, "flips": p.flips.to_json()}


def _bits_from_json(raw: dict, schema: DatasetSchema, where: str) -> np.ndarray:
    """Read bits from an item object: sparse `bits` pairs or `bits_dense`."""
    m, n = schema.shape
    bits = np.zeros((m, n), dtype=np.uint8)
    if "bits_dense" in raw:
        dense = raw["bits_dense"]
        if not isinstance(dense, list) or len(dense) != m:
            raise DatasetParseError(f"{where}: bits_dense must have {m} rows")
        for i, row in enumerate(dense):
            if not isinstance(row, list) or len(row) != n:
                raise DatasetParseError(f"{where}: bits_dense row {i} must have {n} values")
            for j, v in enumerate(row):
                if v not in (0, 1) or isinstance(v, bool):
                    raise DatasetParseError(f"{where}: bit value {v!r} must be 0 or 1")
                bits[i, j] = v
        return bits
    pairs = raw.get("bits", [])
    if not isinstance(pairs, list):
        raise DatasetParseError(f"{where}: bits must be a list of [feature, value] pairs")
    for entry in pairs:
        if (
            not isinstance(entry, list)
            or len(entry) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in entry)
        ):
            raise DatasetParseError(f"{where}: bad active-bit pair {entry!r}")
        i, j = entry
        if not (0 <= i < m and 0 <= j < n):
            raise DatasetParseError(f"{where}: position {(i, j)} outside schema {m}x{n}")
        bits[i, j] = 1
    return bits


def dataset_to_json(d: Dataset) -> dict:
    return {
        "schema": _schema_to_json(d.schema),
        "items": [
            {
                "id": it.id,
                "label": it.label,
                "provenance": _provenance_to_json(it.provenance),
                "bits": [list(p) for p in it.instance.active_positions()],
            }
            for it in d.items
        ],
    }


def dataset_from_json(doc: dict) -> Dataset:
    if not isinstance(doc, dict) or "schema" not in doc or "items" not in doc:
        raise DatasetParseError("document must contain 'schema' and 'items'")
    schema = _schema_from_json(doc["schema"])
    items: list[LabeledInstance] = []
    for idx, raw in enumerate(doc["items"]):
        where = f"item {idx}"
        if not isinstance(raw, dict):
            raise DatasetParseError(f"{where}: not an object")
        try:
            item_id = int(raw["id"])
            label = int(raw["label"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError(f"{where}: bad id/label: {exc}") from exc
        if not 0 <= label < schema.num_classes:
            raise DatasetParseError(
                f"{where} (id {item_id}): label {label} out of range for c={schema.num_classes}"
            )
        bits = _bits_from_json(raw, schema, where)
        prov_raw = raw.get("provenance", "clean")
        if prov_raw == "clean":
            prov = Provenance.clean()
        elif isinstance(prov_raw, dict):
            try:
                prov = Provenance.perturbed(
                    int(prov_raw["origin_id"]), FlipList.from_json(prov_raw["flips"])
                )
            except (KeyError, TypeError, ValueError, FlipError) as exc:
                raise DatasetParseError(f"{where}: bad provenance: {exc}") from exc
        else:
            raise DatasetParseError(f"{where}: bad provenance {prov_raw!r}")
        try:
            inst = Instance(schema, bits)
        except (ConfigError, EncodingModeError) as exc:
            raise DatasetParseError(f"{where}: {exc}") from exc
        items.append(LabeledInstance(item_id, inst, label, prov))
    try:
        return Dataset(schema, tuple(items))
    except (ConfigError, SchemaMismatchError) as exc:
        raise DatasetParseError(str(exc)) from exc


def save_dataset(d: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset_to_json(d), fh, indent=1)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return dataset_from_json(doc)


def export_csv(d: Dataset, path) -> None:
    """One row per item with dense bit columns, for external tooling."""
    m, n = d.schema.shape
    header = ["id", "label", "provenance"] + [
        f"bit_{i}_{j}" for i in range(m) for j in range(n)
    ]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for it in d.items:
            prov = "clean" if not it.provenance.is_perturbed else f"perturbed:{it.provenance.origin_id}"
            writer.writerow([it.id, it.label, prov] + it.instance.bits.reshape(-1).tolist())


def targets_to_json(spec: TargetSpec) -> dict:
    return {
        "task": spec.task_kind,
        "targets": [
            {
                "bits": [list(p) for p in t.instance.active_positions()],
                "target_label": t.target_label,
                "original_label": t.original_label,
            }
            for t in spec.targets
        ],
    }


def targets_from_json(doc: dict, schema: DatasetSchema) -> TargetSpec:
    if not isinstance(doc, dict) or "task" not in doc or "targets" not in doc:
        raise DatasetParseError("target document must contain 'task' and 'targets'")
    entries = []
    for idx, raw in enumerate(doc["targets"]):
        where = f"target {idx}"
        bits = _bits_from_json(raw, schema, where)
        try:
            inst = Instance(schema, bits)
        except (ConfigError, EncodingModeError) as exc:
            raise DatasetParseError(f"{where}: {exc}") from exc
        orig = raw.get("original_label")
        entries.append(
            TargetEntry(
                inst,
                int(raw["target_label"]),
                int(orig) if orig is not None else None,
            )
        )
    try:
        return TargetSpec(tuple(entries), str(doc["task"]))
    except (ConfigError, LabelError) as exc:
        raise DatasetParseError(str(exc)) from exc


def save_targets(spec: TargetSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(targets_to_json(spec), fh, indent=1)
        fh.write("\n")


def load_targets(path, schema: DatasetSchema) -> TargetSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return targets_from_json(doc, schema)


def candidates_to_json(pool: CandidatePool) -> dict:
    def pack(items):
        return [
            {
                "id": it.id,
                "label": it.label,
                "bits": [list(p) for p in it.instance.active_positions()],
            }
            for it in items
        ]

    return {"tampering": pack(pool.tampering), "improvement": pack(pool.improvement)}


def candidates_from_json(doc: dict, schema: DatasetSchema) -> CandidatePool:
    def unpack(raw_items, tag):
        out = []
        for idx, raw in enumerate(raw_items):
            bits = _bits_from_json(raw, schema, f"{tag} candidate {idx}")
            out.append(
                LabeledInstance(int(raw["id"]), Instance(schema, bits), int(raw["label"]))
            )
        return tuple(out)

    return CandidatePool(
        tampering=unpack(doc.get("tampering", []), "tampering"),
        improvement=unpack(doc.get("improvement", []), "improvement"),
    )


def save_candidates(pool: CandidatePool, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(candidates_to_json(pool), fh, indent=1)
        fh.write("\n")


def load_candidates(path, schema: DatasetSchema) -> CandidatePool:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return candidates_from_json(doc, schema)
