"""Dataset manifests, split regeneration, distractor injection, sweeps.

A manifest is a CSV with the exact header
``image_id,person_id,camera_id,split,view_label,det_confidence,frame_id,tracklet_id``
(empty string for absent optionals). Nothing here touches image data; thin
import scripts can map a dataset's native directory layout onto this schema.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path

from .embeddings import JUNK_PERSON_ID
from .errors import ComputationError, FileFormatError, ValidationError

SPLITS = ("train", "test", "query", "gallery", "distractor")
VIEW_LABELS = ("front", "back", "side")
MANIFEST_COLUMNS = (
    "image_id", "person_id", "camera_id", "split",
    "view_label", "det_confidence", "frame_id", "tracklet_id",
)
# Parts of a manifest counted as the "test side" for overlap bookkeeping.
TEST_SIDE_SPLITS = ("test", "query", "gallery")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    person_id: int
    camera_id: int
    split: str
    view_label: str | None = None
    det_confidence: float | None = None
    frame_id: int | None = None
    tracklet_id: str | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r}, expected one of {SPLITS}")
        if self.view_label is not None and self.view_label not in VIEW_LABELS:
            raise ValidationError(
                f"unknown view label {self.view_label!r}, expected one of {VIEW_LABELS}"
            )
        if self.det_confidence is not None and not math.isfinite(self.det_confidence):
            raise ValidationError(
                f"record {self.image_id!r}: det_confidence must be finite"
            )


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    records: tuple[ImageRecord, ...]

    def __post_init__(self):
        records = tuple(self.records)
        seen: set[str] = set()
        for record in records:
            if record.image_id in seen:
                raise ValidationError(
                    f"manifest {self.name!r}: duplicate image_id {record.image_id!r}"
                )
            seen.add(record.image_id)
        object.__setattr__(self, "records", records)

    def __len__(self) -> int:
        return len(self.records)

    def ids_for_splits(self, splits) -> frozenset[int]:
        wanted = set(splits)
        return frozenset(
            r.person_id for r in self.records
            if r.split in wanted and r.person_id != JUNK_PERSON_ID
        )

    @property
    def train_ids(self) -> frozenset[int]:
        return self.ids_for_splits(("train",))

    @property
    def test_ids(self) -> frozenset[int]:
        return self.ids_for_splits(TEST_SIDE_SPLITS)


def load_manifest(path: str | Path, name: str | None = None) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise FileFormatError(f"{path}: manifest not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FileFormatError(f"{path}: empty manifest")
        if tuple(header) != MANIFEST_COLUMNS:
            missing = [c for c in MANIFEST_COLUMNS if c not in header]
            if missing:
                raise FileFormatError(f"{path}: missing manifest column(s): {', '.join(missing)}")
            raise FileFormatError(
                f"{path}: manifest columns must be exactly {','.join(MANIFEST_COLUMNS)}"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(MANIFEST_COLUMNS):
                raise FileFormatError(
                    f"{path}: line {lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}"
                )
            try:
                records.append(
                    ImageRecord(
                        image_id=row[0],
                        person_id=int(row[1]),
                        camera_id=int(row[2]),
                        split=row[3],
                        view_label=row[4] or None,
                        det_confidence=float(row[5]) if row[5] else None,
                        frame_id=int(row[6]) if row[6] else None,
                        tracklet_id=row[7] or None,
                    )
                )
            except (ValueError, ValidationError) as exc:
                raise FileFormatError(f"{path}: line {lineno}: {exc}") from None
    return DatasetManifest(name or path.stem, tuple(records))


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in manifest.records:
            writer.writerow([
                r.image_id,
                r.person_id,
                r.camera_id,
                r.split,
                r.view_label or "",
                "" if r.det_confidence is None else repr(r.det_confidence),
                "" if r.frame_id is None else r.frame_id,
                r.tracklet_id or "",
            ])


@dataclass(frozen=True)
class SplitSpec:
    """A regenerated train/test split over a tracklet dataset."""

    train_ids: frozenset[int]
    test_ids: frozenset[int]
    train_tracklets: frozenset[str]
    test_tracklets: frozenset[str]
    query_tracklets: frozenset[str]
    seed: int
    query_rule: str = "one tracklet per (test id, camera) pair, chosen uniformly under the seed"

    def __post_init__(self):
        if self.train_ids & self.test_ids:
            raise ValidationError(
                f"train and test ids overlap: {sorted(self.train_ids & self.test_ids)[:10]}"
            )

    def to_json_dict(self) -> dict:
        return {
            "train_ids": sorted(self.train_ids),
            "test_ids": sorted(self.test_ids),
            "train_tracklets": sorted(self.train_tracklets),
            "test_tracklets": sorted(self.test_tracklets),
            "query_tracklets": sorted(self.query_tracklets),
            "seed": self.seed,
            "query_rule": self.query_rule,
        }


def generate_xmars_split(
    source: DatasetManifest,
    reference_train_ids,
    reference_test_ids,
    seed: int,
) -> SplitSpec:
    """Reorder a tracklet dataset's split to follow a reference train/test split.

    Every identity of the source (train and test alike) lands on the side the
    reference dataset keeps it on, and all of an identity's tracklets follow
    it. Query tracklets are drawn per (test id, camera) pair under the seed;
    the rule is recorded in the returned spec so runs can be reproduced.
    """
    reference_train_ids = frozenset(int(i) for i in reference_train_ids)
    reference_test_ids = frozenset(int(i) for i in reference_test_ids)
    tracklet_pid: dict[str, int] = {}
    tracklet_cam: dict[str, int] = {}
    for record in source.records:
        if record.tracklet_id is None:
            raise ValidationError(
                f"record {record.image_id!r} has no tracklet_id; split regeneration "
                "needs tracklet-level records"
            )
        pid = tracklet_pid.setdefault(record.tracklet_id, record.person_id)
        if pid != record.person_id:
            raise ValidationError(
                f"tracklet {record.tracklet_id!r} spans person ids {pid} and {record.person_id}"
            )
        tracklet_cam.setdefault(record.tracklet_id, record.camera_id)

    source_ids = frozenset(tracklet_pid.values())
    orphans = sorted(source_ids - (reference_train_ids | reference_test_ids))
    if orphans:
        raise ValidationError(
            f"{len(orphans)} source id(s) appear in neither reference set: {orphans[:20]}"
        )
    train_ids = source_ids & reference_train_ids
    test_ids = source_ids & reference_test_ids

    train_tracklets = frozenset(t for t, pid in tracklet_pid.items() if pid in train_ids)
    test_tracklets = frozenset(t for t, pid in tracklet_pid.items() if pid in test_ids)

    by_id_cam: dict[tuple[int, int], list[str]] = {}
    for tracklet, pid in tracklet_pid.items():
        if pid in test_ids:
            by_id_cam.setdefault((pid, tracklet_cam[tracklet]), []).append(tracklet)
    rng = random.Random(seed)
    query = set()
    for key in sorted(by_id_cam):
        query.add(rng.choice(sorted(by_id_cam[key])))

    return SplitSpec(
        train_ids=train_ids,
        test_ids=test_ids,
        train_tracklets=train_tracklets,
        test_tracklets=test_tracklets,
        query_tracklets=frozenset(query),
        seed=seed,
    )


def overlap_report(a, b) -> list[list[int]]:
    """2x2 matrix of shared-identity counts between two datasets' sides.

    Rows are a's train/test sides, columns b's. Arguments are DatasetManifests
    or (train_ids, test_ids) pairs.
    """
    def sides(dataset):
        if isinstance(dataset, DatasetManifest):
            return dataset.train_ids, dataset.test_ids
        train, test = dataset
        return frozenset(int(i) for i in train), frozenset(int(i) for i in test)

    a_train, a_test = sides(a)
    b_train, b_test = sides(b)
    return [
        [len(a_train & b_train), len(a_train & b_test)],
        [len(a_test & b_train), len(a_test & b_test)],
    ]


def sample_distractor_indices(pool_size: int, n: int, seed: int) -> tuple[int, ...]:
    """Uniform without-replacement sample of pool indices, in pool order."""
    if n > pool_size:
        raise ValidationError(f"cannot sample {n} distractors from a pool of {pool_size}")
    if n < 0:
        raise ValidationError(f"distractor count must be >= 0, got {n}")
    chosen = random.Random(seed).sample(range(pool_size), n)
    return tuple(sorted(chosen))


def inject_distractors(
    gallery: DatasetManifest,
    pool: DatasetManifest,
    n: int,
    seed: int,
    junk_id: int = JUNK_PERSON_ID,
) -> DatasetManifest:
    """Append n seeded-random pool records to the gallery manifest.

    Pool records must carry the junk person id; the original gallery order is
    preserved and selected distractors are appended in pool order, so n equal
    to the pool size reproduces the whole pool independent of the seed.
    """
    bad = [r.image_id for r in pool.records if r.person_id != junk_id]
    if bad:
        raise ValidationError(
            f"distractor pool contains non-junk person ids (expected {junk_id}), "
            f"e.g. {bad[:5]}"
        )
    indices = sample_distractor_indices(len(pool.records), n, seed)
    selected = [replace(pool.records[i], split="distractor") for i in indices]
    return DatasetManifest(gallery.name, gallery.records + tuple(selected))


@dataclass(frozen=True)
class SweepPoint:
    target: float
    threshold: float               # math.inf when nothing is kept
    kept: int
    achieved_average: float
    manifest: DatasetManifest


def threshold_sweep(
    manifest: DatasetManifest,
    num_frames: int,
    targets,
) -> list[SweepPoint]:
    """Filter detections by confidence to hit per-frame detection targets.

    For each target average a, the achievable averages are kept-count /
    num_frames at every distinct-confidence cut; the chosen cut is the
    achievable value closest to a, preferring the one <= a on ties. The
    returned threshold tau keeps exactly the records with confidence >= tau.
    """
    if num_frames < 1:
        raise ValidationError(f"num_frames must be >= 1, got {num_frames}")
    targets = [float(t) for t in targets]
    if not targets:
        raise ValidationError("at least one target is required")
    if any(t <= 0 for t in targets):
        raise ValidationError(f"targets must be positive, got {targets}")
    for record in manifest.records:
        if record.det_confidence is None or record.frame_id is None:
            raise ValidationError(
                f"record {record.image_id!r} lacks det_confidence/frame_id; "
                "sweeps need detector-annotated manifests"
            )

    confidences = sorted((r.det_confidence for r in manifest.records), reverse=True)
    cuts = [(math.inf, 0)]  # (threshold, kept count)
    for i, conf in enumerate(confidences):
        if i + 1 == len(confidences) or confidences[i + 1] != conf:
            cuts.append((conf, i + 1))

    max_average = len(confidences) / num_frames
    points = []
    for target in targets:
        if target > max_average:
            raise ComputationError(
                f"target {target} detections/frame unreachable: keeping every record "
                f"yields only {max_average:.6g}"
            )
        below = max(
            (c for c in cuts if c[1] / num_frames <= target), key=lambda c: c[1]
        )
        above = min(
            (c for c in cuts if c[1] / num_frames >= target), key=lambda c: c[1]
        )
        gap_below = target - below[1] / num_frames
        gap_above = above[1] / num_frames - target
        threshold, kept = below if gap_below <= gap_above else above
        filtered = DatasetManifest(
            manifest.name,
            tuple(r for r in manifest.records if r.det_confidence >= threshold),
        )
        assert len(filtered) == kept
        points.append(
            SweepPoint(
                target=target,
                threshold=threshold,
                kept=kept,
                achieved_average=kept / num_frames,
                manifest=filtered,
            )
        )
    return points
