"""Hierarchical cohorts: synthetic generation, subject-level splits, P-K batches."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import ValidationError

COHORT_FORMAT_VERSION = 1
CLASS_NAMES = ("CN", "MCI", "AD")
DISPLACEMENT = 0.8


class Plane(str, Enum):
    AXIAL = "axial"
    CORONAL = "coronal"
    SAGITTAL = "sagittal"
    SYNTHETIC = "synthetic"


@dataclass
class Subject:
    id: str
    class_label: str
    slices: np.ndarray

    def __post_init__(self):
        if self.class_label not in CLASS_NAMES:
            raise ValidationError(f"unknown class {self.class_label!r}")
        self.slices = np.asarray(self.slices, dtype=np.float64)
        if self.slices.ndim != 2 or len(self.slices) < 1:
            raise ValidationError(f"subject {self.id}: slices must be a non-empty 2-D array")
        if not np.all(np.isfinite(self.slices)):
            raise ValidationError(f"subject {self.id}: slices contain non-finite values")

    @property
    def m(self) -> int:
        return len(self.slices)


@dataclass
class Cohort:
    subjects: list
    plane: Plane = Plane.SYNTHETIC
    m: int = None
    input_dim: int = None

    def __post_init__(self):
        self.plane = Plane(self.plane)
        if self.subjects:
            first = self.subjects[0].slices.shape
            self.m = first[0] if self.m is None else self.m
            self.input_dim = first[1] if self.input_dim is None else self.input_dim
            for s in self.subjects:
                if s.slices.shape != (self.m, self.input_dim):
                    raise ValidationError(
                        f"subject {s.id} has slices {s.slices.shape}, expected {(self.m, self.input_dim)}"
                    )
            ids = [s.id for s in self.subjects]
            if len(set(ids)) != len(ids):
                raise ValidationError("subject ids must be unique")

    def __len__(self):
        return len(self.subjects)

    @property
    def subject_ids(self) -> list:
        return [s.id for s in self.subjects]

    def by_class(self) -> dict:
        out = {}
        for s in self.subjects:
            out.setdefault(s.class_label, []).append(s)
        return out

    def subset(self, subjects) -> "Cohort":
        return Cohort(list(subjects), plane=self.plane, m=self.m, input_dim=self.input_dim)

    def restrict(self, classes) -> "Cohort":
        """Only the subjects whose class is in ``classes``."""
        return self.subset(s for s in self.subjects if s.class_label in classes)

    def arrays(self, classes):
        """Flatten to (X, subject_ids, labels, slice_index) with labels indexing ``classes``."""
        if not self.subjects:
            raise ValidationError("empty cohort")
        lookup = {c: i for i, c in enumerate(classes)}
        X = np.vstack([s.slices for s in self.subjects])
        sid = np.repeat(np.array([s.id for s in self.subjects], dtype=object), self.m)
        try:
            labels = np.repeat(np.array([lookup[s.class_label] for s in self.subjects], dtype=np.int64), self.m)
        except KeyError as exc:
            raise ValidationError(f"class {exc.args[0]} is not part of task classes {classes}") from None
        slice_index = np.tile(np.arange(self.m), len(self.subjects))
        return X, sid, labels, slice_index


@dataclass
class SyntheticSpec:
    subjects_per_class: int = 30
    m: int = 16
    input_dim: int = 64
    class_separation: float = 6.0
    subject_spread: float = 0.5
    slice_noise: float = 1.0
    entanglement: float = 0.0
    seed: int = 0
    classes: tuple = ("CN", "AD")

    def validate(self):
        for name in ("subjects_per_class", "m", "input_dim"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v}")
        for name in ("class_separation", "subject_spread", "slice_noise", "entanglement"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and non-negative, got {v}")
        if self.entanglement > 1:
            raise ValidationError(f"entanglement must lie in [0, 1], got {self.entanglement}")
        classes = tuple(self.classes)
        if len(classes) < 2 or len(set(classes)) != len(classes) or not set(classes) <= set(CLASS_NAMES):
            raise ValidationError(f"classes must be >= 2 distinct names from {CLASS_NAMES}, got {classes}")
        if self.input_dim < len(classes):
            raise ValidationError("input_dim must be at least the number of classes")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = list(self.classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "classes" in d:
            d["classes"] = tuple(d["classes"])
        return cls(**d)


def class_means(spec: SyntheticSpec, rng) -> np.ndarray:
    """Orthonormal directions scaled so every pair of means is ``class_separation`` apart."""
    G = rngmod.normal(rng, (spec.input_dim, len(spec.classes)))
    Qm, R = np.linalg.qr(G)
    Qm = Qm * np.sign(np.diag(R))
    return (spec.class_separation / math.sqrt(2.0)) * Qm.T


def generate_synthetic(spec: SyntheticSpec) -> Cohort:
    """Draw a cohort: class means, subject centres around them, slices around centres.

    ``floor(entanglement * m)`` slices per subject (chosen at random) are
    centred at ``(1 - t) * centre + t * mu_other`` instead, with t = 0.8 and
    mu_other the other-class mean nearest the subject centre; slice noise is
    added on top.
    """
    spec.validate()
    rng = rngmod.stream(spec.seed, "generate")
    means = class_means(spec, rng)
    n_displaced = int(math.floor(spec.entanglement * spec.m + 1e-12))
    subjects = []
    for c, name in enumerate(spec.classes):
        others = [k for k in range(len(spec.classes)) if k != c]
        for _ in range(spec.subjects_per_class):
            center = means[c] + rngmod.normal(rng, spec.input_dim, spec.subject_spread)
            targets = np.repeat(center[None, :], spec.m, axis=0)
            if n_displaced:
                dist = [np.linalg.norm(center - means[k]) for k in others]
                rival = means[others[int(np.argmin(dist))]]
                moved = rng.permutation(spec.m)[:n_displaced]
                targets[moved] = (1.0 - DISPLACEMENT) * center + DISPLACEMENT * rival
            slices = targets + rngmod.normal(rng, (spec.m, spec.input_dim), spec.slice_noise)
            subjects.append(Subject(id=f"S{len(subjects):04d}", class_label=name, slices=slices))
    return Cohort(subjects, plane=Plane.SYNTHETIC, m=spec.m, input_dim=spec.input_dim)


def _apportion(counts: list, total: int) -> list:
    """Split ``total`` across groups proportionally to ``counts`` (largest remainder, ties by group order)."""
    N = sum(counts)
    quotas = [total * c / N for c in counts]
    alloc = [int(math.floor(q)) for q in quotas]
    order = sorted(range(len(counts)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[: total - sum(alloc)]:
        alloc[i] += 1
    return alloc


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_cohort(cohort: Cohort, test_frac: float = 0.2, val_frac_of_train: float = 0.2, seed: int = 0) -> dict:
    """Stratified split at subject granularity into train/val/test cohorts."""
    if not (0 < test_frac < 1 and 0 <= val_frac_of_train < 1):
        raise ValidationError(f"invalid fractions test={test_frac} val={val_frac_of_train}")
    groups = cohort.by_class()
    names = sorted(groups, key=CLASS_NAMES.index)
    counts = [len(groups[c]) for c in names]
    N = sum(counts)
    n_test = _round_half_up(N * test_frac)
    n_val = _round_half_up((N - n_test) * val_frac_of_train)
    need = 2 + (n_val > 0)
    if any(c < need for c in counts) or n_test == 0 or N - n_test - n_val < len(names):
        raise ValidationError(f"too few subjects to stratify: per-class counts {dict(zip(names, counts))}")
    test_alloc = _apportion(counts, n_test)
    val_alloc = _apportion([c - t for c, t in zip(counts, test_alloc)], n_val)
    rng = rngmod.stream(seed, "split")
    parts = {"train": [], "val": [], "test": []}
    for name, t, v in zip(names, test_alloc, val_alloc):
        members = groups[name]
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        parts["test"] += shuffled[:t]
        parts["val"] += shuffled[t : t + v]
        parts["train"] += shuffled[t + v :]
    ranks = {s.id: i for i, s in enumerate(cohort.subjects)}
    out = {k: cohort.subset(sorted(v, key=lambda s: ranks[s.id])) for k, v in parts.items()}
    check_disjoint(out)
    return out


def check_disjoint(splits: dict) -> None:
    """Raise if any subject id appears in more than one split."""
    seen = {}
    for name, part in splits.items():
        for sid in part.subject_ids:
            if sid in seen:
                raise ValidationError(f"subject {sid} leaks between {seen[sid]} and {name}")
            seen[sid] = name


@dataclass
class SamplerConfig:
    subjects_per_batch: int = 10
    slices_per_subject: int = 8

    @property
    def batch_size(self) -> int:
        return self.subjects_per_batch * self.slices_per_subject

    def validate(self, cohort: Cohort | None = None):
        if self.subjects_per_batch < 1 or self.slices_per_subject < 1:
            raise ValidationError("sampler sizes must be positive")
        if cohort is not None:
            if self.slices_per_subject > cohort.m:
                raise ValidationError(f"slices_per_subject={self.slices_per_subject} exceeds m={cohort.m}")
            if self.subjects_per_batch > len(cohort):
                raise ValidationError(
                    f"subjects_per_batch={self.subjects_per_batch} exceeds {len(cohort)} available subjects"
                )


@dataclass
class SliceBatch:
    X: np.ndarray
    subject_ids: np.ndarray
    labels: np.ndarray
    slice_index: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.X)


def sample_batch(cohort: Cohort, config: SamplerConfig, rng: np.random.Generator, classes) -> SliceBatch:
    """Draw W subjects, class-balanced round-robin from a random start class, then Z distinct slices each."""
    config.validate(cohort)
    groups = cohort.by_class()
    present = [c for c in classes if c in groups]
    if not present:
        raise ValidationError("cohort has no subjects of the task classes")
    C = len(present)
    start = int(rng.integers(C))
    order = [present[(start + i) % C] for i in range(config.subjects_per_batch)]
    picked = {}
    for c in present:
        k = order.count(c)
        if k > len(groups[c]):
            raise ValidationError(f"class {c} has {len(groups[c])} subjects, batch needs {k}")
        picked[c] = list(rng.choice(len(groups[c]), size=k, replace=False))
    lookup = {c: i for i, c in enumerate(classes)}
    rows, sids, labels, sidx = [], [], [], []
    for c in order:
        subj = groups[c][picked[c].pop(0)]
        chosen = rng.choice(cohort.m, size=config.slices_per_subject, replace=False)
        rows.append(subj.slices[chosen])
        sids += [subj.id] * len(chosen)
        labels += [lookup[c]] * len(chosen)
        sidx.append(chosen)
    return SliceBatch(
        X=np.vstack(rows),
        subject_ids=np.array(sids, dtype=object),
        labels=np.array(labels, dtype=np.int64),
        slice_index=np.concatenate(sidx),
    )


def steps_per_epoch(cohort: Cohort, config: SamplerConfig) -> int:
    return max(1, math.ceil(len(cohort) * cohort.m / config.batch_size))


def cohort_to_dict(cohort: Cohort) -> dict:
    return {
        "version": COHORT_FORMAT_VERSION,
        "plane": cohort.plane.value,
        "m": cohort.m,
        "input_dim": cohort.input_dim,
        "subjects": [
            {"id": s.id, "class": s.class_label, "slices": s.slices.tolist()} for s in cohort.subjects
        ],
    }


def cohort_from_dict(d: dict) -> Cohort:
    if d.get("version") != COHORT_FORMAT_VERSION:
        raise ValidationError(f"unsupported cohort format version {d.get('version')!r}")
    subjects = [Subject(id=str(s["id"]), class_label=s["class"], slices=s["slices"]) for s in d["subjects"]]
    return Cohort(subjects, plane=d.get("plane", "synthetic"), m=d["m"], input_dim=d["input_dim"])


def save_cohort(cohort: Cohort, path) -> None:
    # json writes floats via repr: shortest string that round-trips exactly
    Path(path).write_text(json.dumps(cohort_to_dict(cohort), separators=(",", ":")) + "\n")


def load_cohort(path) -> Cohort:
    return cohort_from_dict(json.loads(Path(path).read_text()))
