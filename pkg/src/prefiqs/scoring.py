"""Embedding drift under pruning and its rescaling to a utility score.

For an input ``x`` the drift is the Euclidean distance between the unit
embeddings of the original and the pruned model, ``D in [0, 2]``; the quality
score is ``Q = 1 - D / 2`` so stable embeddings score close to 1.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DriftOutOfRange, EmptySampleSet, ShapeMismatch, ZeroNorm
from .model import embed_batch, forward

log = logging.getLogger(__name__)

DRIFT_MAX = 2.0
DRIFT_TOL = 1e-6


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    drift: float | None
    quality: float | None
    rho: float | None = None
    criterion: str | None = None
    granularity: str | None = None
    error: str | None = None
    clamped: bool = False

    @property
    def ok(self):
        return self.error is None


def row_distances(A, B):
    """Row-wise Euclidean distance, accumulated left to right in float64."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    acc = np.zeros(A.shape[0], dtype=np.float64)
    for j in range(A.shape[1]):
        diff = A[:, j] - B[:, j]
        acc += diff * diff
    return np.sqrt(acc)


def clamp_drift(D):
    """Return ``(D, clamped)``; values within rounding of the upper bound clamp to 2."""
    D = float(D)
    if D < 0.0 or D > DRIFT_MAX + DRIFT_TOL or not np.isfinite(D):
        raise DriftOutOfRange(f"drift {D!r} outside [0, 2]")
    if D > DRIFT_MAX:
        return DRIFT_MAX, True
    return D, False


def quality(D):
    D, _ = clamp_drift(D)
    return 1.0 - D / 2.0


def angle_cosine_from_drift(D):
    D, _ = clamp_drift(D)
    return 1.0 - D * D / 2.0


def _check_dims(original, pruned):
    if original.d != pruned.d:
        raise DimensionMismatch(f"embedding dims differ: {original.d} vs {pruned.d}")
    if original.input_shape != pruned.input_shape:
        raise DimensionMismatch(f"input shapes differ: {original.input_shape} vs {pruned.input_shape}")


def drift(original, pruned, x):
    _check_dims(original, pruned)
    e0 = forward(original, x)
    e1 = forward(pruned, x)
    D, clamped = clamp_drift(row_distances(e0[None], e1[None])[0])
    if clamped:
        log.warning("drift clamped to 2")
    return D


def drift_batch(original, pruned, X, workers=None):
    """Vectorized drift over a batch of well-formed inputs; raises ZeroNorm on degenerate rows."""
    _check_dims(original, pruned)
    e0, ok0 = embed_batch(original, X, workers)
    e1, ok1 = embed_batch(pruned, X, workers)
    if not (ok0.all() and ok1.all()):
        raise ZeroNorm("degenerate embedding in batch")
    D = row_distances(e0, e1)
    if (D > DRIFT_MAX + DRIFT_TOL).any():
        raise DriftOutOfRange("drift above 2: broken normalization")
    return np.minimum(D, DRIFT_MAX)


def batch_score(original, pruned, samples, rho=None, criterion=None, granularity=None, workers=None):
    """Score ``[(sample_id, x), ...]``; one record per sample in input order.

    Sample-level failures (bad shape, zero-norm embedding) produce a record
    with ``error`` set instead of aborting the batch.
    """
    samples = list(samples)
    if not samples:
        raise EmptySampleSet("no samples to score")
    _check_dims(original, pruned)
    prov = dict(rho=rho, criterion=criterion, granularity=granularity)
    errors = {}
    good = []
    for i, (_, x) in enumerate(samples):
        if np.shape(x) != original.input_shape:
            errors[i] = ShapeMismatch.__name__
        else:
            good.append(i)
    results = {}
    if good:
        X = np.stack([np.asarray(samples[i][1], dtype=np.float32) for i in good])
        e0, ok0 = embed_batch(original, X, workers)
        e1, ok1 = embed_batch(pruned, X, workers)
        D = row_distances(e0, e1)
        for row, i in enumerate(good):
            if not (ok0[row] and ok1[row]):
                errors[i] = ZeroNorm.__name__
                continue
            try:
                d, clamped = clamp_drift(D[row])
            except DriftOutOfRange:
                errors[i] = DriftOutOfRange.__name__
                continue
            results[i] = (d, clamped)
    records = []
    n_clamped = 0
    for i, (sid, _) in enumerate(samples):
        if i in errors:
            records.append(ScoreRecord(str(sid), None, None, error=errors[i], **prov))
        else:
            d, clamped = results[i]
            n_clamped += clamped
            records.append(ScoreRecord(str(sid), d, 1.0 - d / 2.0, clamped=clamped, **prov))
    if n_clamped:
        log.warning("%d drift value(s) clamped to 2", n_clamped)
    return records


def fmt(x):
    return f"{float(x):.17g}"


def write_scores_csv(records, path):
    """Header ``sample_id,drift,quality``; failed samples keep their row with empty fields."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "drift", "quality"])
        for r in records:
            if r.ok:
                w.writerow([r.sample_id, fmt(r.drift), fmt(r.quality)])
            else:
                w.writerow([r.sample_id, "", ""])


def read_scores_csv(path):
    """Return ``{sample_id: quality}`` for every successfully scored row."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "quality" not in reader.fieldnames:
            raise ValueError(f"{path}: expected a sample_id,drift,quality header")
        for row in reader:
            if row["quality"]:
                out[row["sample_id"]] = float(row["quality"])
    return out
