"""Crowd Likert judgements: ingestion, consensus aggregation, and reliability.

Raw ratings are integers on a 1..7 Likert scale. They are mapped onto [0, 1]
with the affine map (raw - 1) / 6 and averaged per image to produce the
consensus score that regression models are trained against. Standard
deviations here are population standard deviations throughout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateRatingError,
    InsufficientDataError,
    NoDataError,
    RecordRejectedError,
    UndefinedCorrelationError,
)

LIKERT_MIN = 1
LIKERT_MAX = 7

RATINGS_FIELDS = ("image_id", "rater_id", "trait", "raw_score")
CONSENSUS_FIELDS = ("image_id", "trait", "mean_norm", "std_norm", "n_ratings")


@dataclass(frozen=True)
class RatingRecord:
    """One rater's raw Likert judgement of one image for one trait."""

    image_id: str
    rater_id: str
    trait: str
    raw_score: int


@dataclass(frozen=True)
class ConsensusScore:
    """Per-image aggregate of normalized ratings; ``mean_norm`` is the regression target."""

    image_id: str
    trait: str
    mean_norm: float
    std_norm: float
    n_ratings: int


@dataclass(frozen=True)
class TraitStats:
    """Dataset-level statistics of per-image consensus scores for one trait."""

    trait: str
    mean_of_ratings: float
    std_of_ratings: float
    mean_std_of_ratings: float
    mean_num_of_ratings: float
    n_images: int


@dataclass(frozen=True)
class ReliabilityReport:
    """Split-half agreement between two disjoint rater halves."""

    trait: str
    r_squared: float
    n_images: int
    n_raters_half_a: int
    n_raters_half_b: int
    seed: int


def normalize_likert(raw_score: int) -> float:
    """Map a raw 1..7 Likert score onto [0, 1] with (raw - 1) / 6."""
    if not isinstance(raw_score, (int, np.integer)) or isinstance(raw_score, bool):
        raise RecordRejectedError(f"raw_score must be an integer, got {raw_score!r}")
    if not LIKERT_MIN <= raw_score <= LIKERT_MAX:
        raise RecordRejectedError(
            f"raw_score must be in [{LIKERT_MIN}, {LIKERT_MAX}], got {raw_score}"
        )
    return (raw_score - LIKERT_MIN) / (LIKERT_MAX - LIKERT_MIN)


def _validate_record(rec: RatingRecord) -> float:
    try:
        return normalize_likert(rec.raw_score)
    except RecordRejectedError as exc:
        raise RecordRejectedError(
            f"rejected rating of image {rec.image_id!r} by rater {rec.rater_id!r}: {exc}",
            image_id=rec.image_id,
            rater_id=rec.rater_id,
        ) from None


def aggregate(records) -> list[ConsensusScore]:
    """Aggregate rating records into one ConsensusScore per (image, trait).

    Empty input yields an empty list. Duplicate (image, rater, trait) triples
    are an error: crowd platforms deduplicate, so a duplicate here means an
    ingestion bug that silent averaging would hide.
    """
    groups: dict[tuple[str, str], list[float]] = {}
    seen: set[tuple[str, str, str]] = set()
    duplicates = []
    for rec in records:
        norm = _validate_record(rec)
        key = (rec.image_id, rec.rater_id, rec.trait)
        if key in seen:
            duplicates.append(key)
        seen.add(key)
        groups.setdefault((rec.image_id, rec.trait), []).append(norm)
    if duplicates:
        shown = ", ".join(repr(d) for d in sorted(duplicates)[:10])
        raise DuplicateRatingError(
            f"{len(duplicates)} duplicate (image, rater, trait) rating(s): {shown}",
            duplicates=sorted(duplicates),
        )
    out = []
    for (image_id, trait) in sorted(groups):
        # sort before reducing: results are bit-identical under record reordering
        vals = np.sort(np.asarray(groups[(image_id, trait)], dtype=np.float64))
        out.append(
            ConsensusScore(
                image_id=image_id,
                trait=trait,
                mean_norm=float(vals.mean()),
                std_norm=float(vals.std()),
                n_ratings=int(vals.size),
            )
        )
    return out


def trait_stats(scores, trait: str) -> TraitStats:
    """Summarize consensus scores for one trait (population std over images)."""
    sel = [s for s in scores if s.trait == trait]
    if not sel:
        raise NoDataError(f"no consensus scores for trait {trait!r}")
    means = np.array([s.mean_norm for s in sel], dtype=np.float64)
    stds = np.array([s.std_norm for s in sel], dtype=np.float64)
    counts = np.array([s.n_ratings for s in sel], dtype=np.float64)
    return TraitStats(
        trait=trait,
        mean_of_ratings=float(means.mean()),
        std_of_ratings=float(means.std()),
        mean_std_of_ratings=float(stds.mean()),
        mean_num_of_ratings=float(counts.mean()),
        n_images=len(sel),
    )


def split_half_reliability(records, trait: str, seed: int) -> ReliabilityReport:
    """Squared Pearson correlation between mean ratings of two disjoint rater halves.

    Raters (not individual ratings) are partitioned at random with the given
    seed. Per-image means are computed within each half over the images rated
    by both halves; images seen by only one half are dropped.
    """
    by_rater: dict[str, list[tuple[str, float]]] = {}
    for rec in records:
        if rec.trait != trait:
            continue
        norm = _validate_record(rec)
        by_rater.setdefault(rec.rater_id, []).append((rec.image_id, norm))
    raters = sorted(by_rater)
    if len(raters) < 2:
        raise InsufficientDataError(
            f"split-half reliability needs >= 2 raters for trait {trait!r}, got {len(raters)}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(raters))
    half = len(raters) // 2
    half_a = {raters[i] for i in perm[:half]}
    half_b = {raters[i] for i in perm[half:]}

    sums: dict[str, list[float]] = {}  # image -> [sum_a, n_a, sum_b, n_b]
    for rater, pairs in by_rater.items():
        offset = 0 if rater in half_a else 2
        for image_id, norm in pairs:
            acc = sums.setdefault(image_id, [0.0, 0, 0.0, 0])
            acc[offset] += norm
            acc[offset + 1] += 1
    both = sorted(img for img, acc in sums.items() if acc[1] > 0 and acc[3] > 0)
    if len(both) < 2:
        raise InsufficientDataError(
            f"only {len(both)} image(s) rated by both rater halves for trait {trait!r}; need >= 2"
        )
    mean_a = np.array([sums[img][0] / sums[img][1] for img in both])
    mean_b = np.array([sums[img][2] / sums[img][3] for img in both])
    return ReliabilityReport(
        trait=trait,
        r_squared=squared_pearson(mean_a, mean_b),
        n_images=len(both),
        n_raters_half_a=len(half_a),
        n_raters_half_b=len(half_b),
        seed=seed,
    )


def squared_pearson(a, b) -> float:
    """Squared Pearson correlation of two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"need two equal-length 1-D vectors, got {a.shape} and {b.shape}")
    da = a - a.mean()
    db = b - b.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va == 0.0 or vb == 0.0:
        raise UndefinedCorrelationError(
            "correlation undefined: at least one input vector is constant"
        )
    r = float(da @ db) / np.sqrt(va * vb)
    return float(r * r)


def read_ratings(path) -> list[RatingRecord]:
    """Read rating records from a UTF-8 delimited file with a header row."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(RATINGS_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise RecordRejectedError(
                f"{path}: missing required column(s) {sorted(missing)}"
            )
        out = []
        for i, row in enumerate(reader, start=2):
            try:
                raw = int(row["raw_score"])
            except (TypeError, ValueError):
                raise RecordRejectedError(
                    f"{path}:{i}: raw_score {row.get('raw_score')!r} is not an integer",
                    image_id=row.get("image_id"),
                    rater_id=row.get("rater_id"),
                ) from None
            out.append(
                RatingRecord(
                    image_id=row["image_id"],
                    rater_id=row["rater_id"],
                    trait=row["trait"],
                    raw_score=raw,
                )
            )
    return out


def write_ratings(records, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RATINGS_FIELDS)
        for rec in records:
            writer.writerow([rec.image_id, rec.rater_id, rec.trait, rec.raw_score])


def read_consensus(path) -> list[ConsensusScore]:
    """Read consensus scores from a UTF-8 delimited file with a header row."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CONSENSUS_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise RecordRejectedError(
                f"{path}: missing required column(s) {sorted(missing)}"
            )
        return [
            ConsensusScore(
                image_id=row["image_id"],
                trait=row["trait"],
                mean_norm=float(row["mean_norm"]),
                std_norm=float(row["std_norm"]),
                n_ratings=int(row["n_ratings"]),
            )
            for row in reader
        ]


def write_consensus(scores, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CONSENSUS_FIELDS)
        for s in scores:
            writer.writerow(
                [s.image_id, s.trait, repr(s.mean_norm), repr(s.std_norm), s.n_ratings]
            )
