"""Experimental protocol: manifests, splits, ROC/AUC and flip statistics.

Frames whose landmark files are missing or unreadable are skipped with a
warning and counted in the coverage statistic rather than aborting a run.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import classifier, pnp
from .errors import (
    HeadPoseError,
    InvalidInputError,
    ParseError,
    SplitInfeasibleError,
    UndefinedMetricError,
)
from .face_camera import approximate_intrinsics, load_landmarks
from .features import PosePair, cosine_distance, pose_pair_features

log = logging.getLogger(__name__)

LABELS = ("authentic", "fake")
SPLIT_MODES = ("overlapping-subjects", "disjoint-subjects")
SPLIT_ATTEMPTS = 200


@dataclass(frozen=True)
class ManifestRecord:
    frame_id: str
    label: str
    subject_ids: tuple
    landmarks: str
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.label not in LABELS:
            raise InvalidInputError(f"{self.frame_id}: label must be one of {LABELS}")
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        if self.label == "fake" and not self.subject_ids:
            raise InvalidInputError(f"{self.frame_id}: fake record lists no subject")
        if int(self.image_width) <= 0 or int(self.image_height) <= 0:
            raise InvalidInputError(f"{self.frame_id}: image dimensions must be positive")
        object.__setattr__(self, "image_width", int(self.image_width))
        object.__setattr__(self, "image_height", int(self.image_height))

    @property
    def is_fake(self):
        return self.label == "fake"

    def to_dict(self):
        return {
            "frame_id": self.frame_id,
            "label": self.label,
            "subject_ids": list(self.subject_ids),
            "landmarks": self.landmarks,
            "image_width": self.image_width,
            "image_height": self.image_height,
        }


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple
    base_dir: Optional[Path] = None

    def __post_init__(self):
        records = tuple(self.records)
        ids = [r.frame_id for r in records]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise InvalidInputError(f"duplicate frame_id {dup!r}")
        object.__setattr__(self, "records", records)
        if self.base_dir is not None:
            object.__setattr__(self, "base_dir", Path(self.base_dir))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, record):
        p = Path(record.landmarks)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p

    def subset(self, records):
        return DatasetManifest(tuple(sorted(records, key=lambda r: r.frame_id)), self.base_dir)

    @property
    def subjects(self):
        return sorted({s for r in self.records for s in r.subject_ids})

    def class_counts(self):
        fake = sum(r.is_fake for r in self.records)
        return {"authentic": len(self.records) - fake, "fake": fake}


def load_manifest(path):
    path = Path(path)
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                records.append(
                    ManifestRecord(
                        frame_id=str(d["frame_id"]),
                        label=d["label"],
                        subject_ids=tuple(d.get("subject_ids", ())),
                        landmarks=d["landmarks"],
                        image_width=d["image_width"],
                        image_height=d["image_height"],
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"bad manifest record: {exc}", path, lineno) from exc
    try:
        return DatasetManifest(tuple(records), base_dir=path.parent)
    except InvalidInputError as exc:
        raise ParseError(str(exc), path) from exc


def write_manifest(manifest, path):
    with open(path, "w") as fh:
        for r in manifest.records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


# ---------------------------------------------------------------- ROC / AUC


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def _binary_labels(labels):
    out = []
    for v in labels:
        if isinstance(v, str):
            if v not in LABELS:
                raise InvalidInputError(f"unknown label {v!r}")
            out.append(v == "fake")
        else:
            out.append(bool(v > 0))
    return np.array(out, dtype=bool)


def auc_counts(scores, labels):
    """``(2 * wins + ties, 2 * P * N)`` over positive/negative pairs, as integers."""
    s = np.asarray(scores, dtype=float)
    y = _binary_labels(labels)
    if len(s) != len(y):
        raise InvalidInputError("scores and labels differ in length")
    pos, neg = s[y], np.sort(s[~y])
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricError("AUC needs both positive and negative labels")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    num = 2 * int(np.sum(below)) + int(np.sum(upto - below))
    return num, 2 * len(pos) * len(neg)


def roc_auc(scores, labels):
    """ROC curve and the Mann-Whitney AUC (ties count one half)."""
    num, den = auc_counts(scores, labels)
    s = np.asarray(scores, dtype=float)
    y = _binary_labels(labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    P, N = int(y.sum()), int((~y).sum())
    return RocCurve(
        thresholds=np.r_[np.inf, s[last]],
        fpr=np.r_[0.0, fp / N],
        tpr=np.r_[0.0, tp / P],
        auc=num / den,
    )


# ---------------------------------------------------------- flip statistics


def _flip_flags(item):
    if isinstance(item, PosePair):
        return bool(item.inner.flipped), bool(item.all.flipped)
    inner, every = item
    return bool(getattr(inner, "flipped", inner)), bool(getattr(every, "flipped", every))


@dataclass(frozen=True)
class FlipContingency:
    both: int
    inner_only: int
    all_only: int
    neither: int

    @property
    def n(self):
        return self.both + self.inner_only + self.all_only + self.neither

    def proportions(self):
        n = self.n
        return {
            "both": self.both / n,
            "inner_only": self.inner_only / n,
            "all_only": self.all_only / n,
            "neither": self.neither / n,
        }

    @property
    def at_least_one(self):
        return (self.n - self.neither) / self.n

    @property
    def conflicting(self):
        return (self.inner_only + self.all_only) / self.n

    def table(self):
        """Rows ``inner in (flipped, correct)`` by columns ``all in (flipped, correct)``."""
        p = self.proportions()
        return [
            ["flipped", p["both"], p["inner_only"]],
            ["correct", p["all_only"], p["neither"]],
        ]


def flip_contingency(pairs):
    """Counts of (inner flipped, all flipped) combinations.

    Items are :class:`PosePair` objects or ``(inner_flipped, all_flipped)`` pairs.
    """
    flags = [_flip_flags(p) for p in pairs]
    if not flags:
        raise UndefinedMetricError("contingency of an empty frame set")
    return FlipContingency(
        both=sum(i and a for i, a in flags),
        inner_only=sum(i and not a for i, a in flags),
        all_only=sum(a and not i for i, a in flags),
        neither=sum(not i and not a for i, a in flags),
    )


class ConditionalFakeProb(NamedTuple):
    conflicting: Optional[float]
    non_conflicting: Optional[float]


def conditional_fake_prob(items):
    """Empirical P(fake | conflicting) and P(fake | not conflicting).

    ``items`` yields ``(pair_or_flags, label)``; an empty cell gives ``None``.
    """
    counts = {True: [0, 0], False: [0, 0]}
    for pair, label in items:
        i, a = _flip_flags(pair)
        fake = _binary_labels([label])[0]
        cell = counts[i != a]
        cell[0] += int(fake)
        cell[1] += 1
    if counts[True][1] + counts[False][1] == 0:
        raise UndefinedMetricError("no labelled frames")

    def ratio(c):
        return c[0] / c[1] if c[1] else None

    return ConditionalFakeProb(ratio(counts[True]), ratio(counts[False]))


def histogram(values, bins):
    """Uniform bins over ``[min, max]`` with the last bin closed on the right."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise UndefinedMetricError("histogram of no values")
    if int(bins) < 1:
        raise InvalidInputError("bin count must be at least 1")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("histogram values must be finite")
    counts, edges = np.histogram(v, bins=int(bins))
    return edges, counts


# ------------------------------------------------------------------- splits


def _subject_groups(records):
    """Connected components of records linked by any shared subject token."""
    parent = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for r in records:
        tokens = r.subject_ids or (f"\0{r.frame_id}",)
        root = find(tokens[0])
        for t in tokens[1:]:
            parent[find(t)] = root
    groups = {}
    for r in records:
        tokens = r.subject_ids or (f"\0{r.frame_id}",)
        groups.setdefault(find(tokens[0]), []).append(r)
    return [groups[k] for k in sorted(groups, key=lambda k: min(r.frame_id for r in groups[k]))]


def _class_vec(records):
    fake = sum(r.is_fake for r in records)
    return np.array([len(records) - fake, fake], dtype=float)


def _both_classes(records):
    v = _class_vec(records)
    return bool(v[0] > 0 and v[1] > 0)


def _balance(records, rng):
    auth = [r for r in records if not r.is_fake]
    fake = [r for r in records if r.is_fake]
    n = min(len(auth), len(fake))
    keep = []
    for cls in (auth, fake):
        idx = np.sort(rng.permutation(len(cls))[:n])
        keep.extend(cls[i] for i in idx)
    return keep


def split_dataset(manifest, mode="disjoint-subjects", seed=0, balance=True, test_fraction=0.5):
    """Deterministic train/test split.

    ``disjoint-subjects`` keeps every subject token (including the source
    identity of fake frames) on one side only; ``overlapping-subjects`` splits
    frames stratified by class.  With ``balance`` each side drops random excess
    frames until both classes have equal counts.
    """
    if mode not in SPLIT_MODES:
        raise InvalidInputError(f"split mode must be one of {SPLIT_MODES}")
    if not 0 < test_fraction < 1:
        raise InvalidInputError("test_fraction must lie strictly between 0 and 1")
    records = sorted(manifest.records, key=lambda r: r.frame_id)
    if not _both_classes(records):
        raise SplitInfeasibleError(f"{mode}: manifest needs both authentic and fake frames")
    rng = np.random.default_rng([int(seed), 0x73706C])

    if mode == "overlapping-subjects":
        train, test = [], []
        for fake in (False, True):
            cls = [r for r in records if r.is_fake == fake]
            if len(cls) < 2:
                raise SplitInfeasibleError(f"{mode}: each class needs at least two frames")
            perm = rng.permutation(len(cls))
            n_test = min(max(1, int(round(test_fraction * len(cls)))), len(cls) - 1)
            test.extend(cls[i] for i in perm[:n_test])
            train.extend(cls[i] for i in perm[n_test:])
    else:
        groups = _subject_groups(records)
        if len(groups) < 2:
            raise SplitInfeasibleError(
                f"{mode}: needs at least two independent subject groups, found {len(groups)}"
            )
        total = _class_vec(records)
        for _ in range(SPLIT_ATTEMPTS):
            sides = ([], [])
            got = [np.zeros(2), np.zeros(2)]
            target = (total * (1 - test_fraction), total * test_fraction)
            for g in rng.permutation(len(groups)):
                v = _class_vec(groups[g])
                gain = [float((target[k] - got[k]) @ v) for k in (0, 1)]
                k = int(gain[1] > gain[0]) if gain[0] != gain[1] else int(rng.integers(2))
                sides[k].extend(groups[g])
                got[k] += v
            train, test = sides
            if _both_classes(train) and _both_classes(test):
                break
        else:
            raise SplitInfeasibleError(
                f"{mode}: no partition of {len(groups)} subject groups leaves "
                "both classes on both sides"
            )

    if balance:
        train, test = _balance(train, rng), _balance(test, rng)
    return manifest.subset(train), manifest.subset(test)


# ----------------------------------------------------------------- pipeline


@dataclass(frozen=True)
class FrameResult:
    record: ManifestRecord
    pair: PosePair


@dataclass(frozen=True)
class PipelineResult:
    frames: tuple
    skipped: tuple = field(default=())

    @property
    def coverage(self):
        total = len(self.frames) + len(self.skipped)
        return len(self.frames) / total if total else 0.0


def estimate_frame(record, landmarks_path, model, config):
    lm = load_landmarks(landmarks_path, record.image_width, record.image_height)
    cam = approximate_intrinsics(record.image_width, record.image_height)
    inner = pnp.estimate_pose(model, "inner", lm, cam, config)
    every = pnp.estimate_pose(model, "all", lm, cam, config)
    return PosePair(inner, every, record.frame_id)


def estimate_pose_pairs(manifest, model, config=None):
    """Pose pairs for every readable frame, sorted by frame id."""
    config = config or pnp.SolverConfig()
    frames, skipped = [], []
    for rec in sorted(manifest.records, key=lambda r: r.frame_id):
        try:
            pair = estimate_frame(rec, manifest.resolve(rec), model, config)
        except (OSError, HeadPoseError) as exc:
            log.warning("skipping frame %s: %s", rec.frame_id, exc)
            skipped.append(rec.frame_id)
            continue
        frames.append(FrameResult(rec, pair))
    return PipelineResult(tuple(frames), tuple(skipped))


def frame_features(frames):
    return [
        pose_pair_features(f.pair, f.record.label, f.record.subject_ids) for f in frames
    ]


def frame_cosine_distances(frames):
    return np.array([cosine_distance(f.pair.all.rotation, f.pair.inner.rotation) for f in frames])


def train_and_score(train_features, test_features, C=1.0, seed=0):
    """Fit on one feature set and return ``(model, fake probabilities, labels)`` on another."""
    model = classifier.train(train_features, C=C, seed=seed)
    X = np.array([f.values for f in test_features])
    return model, classifier.predict_proba(model, X), [f.label for f in test_features]


class LeakageResult(NamedTuple):
    auc_overlapping: float
    auc_disjoint: float

    @property
    def gap(self):
        return self.auc_overlapping - self.auc_disjoint


def identity_leakage_experiment(manifest, config=None, C=1.0, seed=0, model=None, pairs=None):
    """Test AUC under overlapping and subject-disjoint splits with identical settings.

    Poses are estimated once per frame (or taken from ``pairs``) and shared by
    both protocols; only the partition differs.
    """
    if pairs is None:
        if model is None:
            raise InvalidInputError("a face model is needed to estimate poses")
        pairs = estimate_pose_pairs(manifest, model, config)
    by_id = {f.record.frame_id: f for f in pairs.frames}
    aucs = []
    for mode in SPLIT_MODES:
        train, test = split_dataset(manifest, mode, seed)
        tr = [by_id[r.frame_id] for r in train if r.frame_id in by_id]
        te = [by_id[r.frame_id] for r in test if r.frame_id in by_id]
        _, proba, labels = train_and_score(frame_features(tr), frame_features(te), C, seed)
        aucs.append(roc_auc(proba, labels).auc)
    return LeakageResult(*aucs)
