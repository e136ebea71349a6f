"""Biometric verification metrics and error-versus-discard (EDC) curves.

Comparison scores are cosine similarities of unit embeddings and a pair is
accepted when ``score >= threshold``. The EDC threshold is fixed once from
all impostor scores at zero discard and held constant while the
lowest-quality images are removed.
"""

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyGenuine,
    EmptyGrid,
    EmptyScores,
    GridTooShort,
    InsufficientImpostors,
    MissingEmbedding,
    MissingQuality,
)

DEFAULT_FMR = 1e-2
PAUC_MAX_DISCARD = 0.3
AUC_MAX_DISCARD = 0.95
_FLOOR_EPS = 1e-9  # keeps floor(0.29 * 100) at 29 despite binary rounding


def default_grid():
    """Discard fractions 0.00, 0.01, ..., 0.95."""
    return [i / 100 for i in range(96)]


def _floor(x):
    return int(math.floor(x + _FLOOR_EPS))


class Pair(NamedTuple):
    id_a: str
    id_b: str
    genuine: bool


class FmrThreshold(NamedTuple):
    threshold: float
    achieved_fmr: float
    k: int
    insufficient: bool


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"cannot compare shapes {a.shape} and {b.shape}")
    acc = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        acc += x * y
    return acc


def pair_scores(embeddings, pairs):
    """Cosine scores and genuine flags for every pair, in pair order."""
    ids = {}
    for p in pairs:
        for sid in (p[0], p[1]):
            if sid not in embeddings:
                raise MissingEmbedding(sid)
            ids.setdefault(sid, len(ids))
    if not ids:
        return np.zeros(0), np.zeros(0, dtype=bool)
    E = np.stack([np.asarray(embeddings[s], dtype=np.float64) for s in ids])
    ia = np.array([ids[p[0]] for p in pairs])
    ib = np.array([ids[p[1]] for p in pairs])
    A, B = E[ia], E[ib]
    acc = np.zeros(len(pairs))
    for j in range(E.shape[1]):
        acc += A[:, j] * B[:, j]
    return acc, np.array([bool(p[2]) for p in pairs])


def threshold_at_fmr(impostor_scores, fmr):
    """Smallest threshold among the distinct scores (and +inf) accepting at most
    ``floor(fmr * n)`` impostors."""
    s = np.sort(np.asarray(impostor_scores, dtype=np.float64))[::-1]
    n = s.size
    if n == 0:
        raise EmptyScores("no impostor scores")
    k = min(_floor(fmr * n), n)
    if k == 0:
        warnings.warn(f"fmr={fmr} with {n} impostors allows no false match; threshold is +inf",
                      InsufficientImpostors, stacklevel=2)
        return FmrThreshold(math.inf, 0.0, 0, True)
    tau = s[k - 1]
    if k < n and s[k] == tau:
        # tie straddles the cut: step up to the next larger distinct score
        first = int(np.searchsorted(-s, -tau, side="left"))
        tau = s[first - 1] if first > 0 else math.inf
    accepted = int(np.count_nonzero(s >= tau))
    return FmrThreshold(float(tau), accepted / n, k, False)


def fnmr_at_threshold(genuine_scores, tau):
    g = np.asarray(genuine_scores, dtype=np.float64)
    if g.size == 0:
        raise EmptyGenuine("no genuine scores")
    return int(np.count_nonzero(g < tau)) / g.size


@dataclass
class EdcCurve:
    fmr_target: float
    threshold: float
    achieved_fmr: float
    points: list
    carried: list = field(default_factory=list)
    insufficient_impostors: bool = False
    quality_source: str | None = None

    @property
    def discard(self):
        return np.array([p[0] for p in self.points])

    @property
    def fnmr(self):
        return np.array([p[1] for p in self.points])


def discard_order(qualities, image_ids):
    """Image ids from lowest to highest quality; ties by ascending id."""
    for sid in image_ids:
        if sid not in qualities:
            raise MissingQuality(sid)
    return sorted(image_ids, key=lambda s: (qualities[s], s))


def edc_curve(embeddings, pairs, qualities, fmr=DEFAULT_FMR, grid=None, quality_source=None):
    grid = default_grid() if grid is None else list(grid)
    if not grid:
        raise EmptyGrid("empty discard grid")
    if grid[0] != 0 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must start at 0 and be strictly increasing")
    scores, genuine = pair_scores(embeddings, pairs)
    images = sorted({p[0] for p in pairs} | {p[1] for p in pairs})
    order = discard_order(qualities, images)
    rank = {sid: i for i, sid in enumerate(order)}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        thr = threshold_at_fmr(scores[~genuine], fmr)
    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=2)
    gen_scores = scores[genuine]
    if gen_scores.size == 0:
        raise EmptyGenuine("no genuine pairs")
    # a pair disappears as soon as its lower-ranked image is discarded
    first_gone = np.array([min(rank[p[0]], rank[p[1]]) for p in pairs])[genuine]
    rejected = gen_scores < thr.threshold
    n_img = len(images)
    points, carried = [], []
    for d in grid:
        cut = _floor(d * n_img)
        alive = first_gone >= cut
        if alive.any():
            fnmr = int(np.count_nonzero(rejected & alive)) / int(np.count_nonzero(alive))
            carried.append(False)
        else:
            fnmr = points[-1][1] if points else 0.0
            carried.append(True)
        points.append((float(d), fnmr))
    return EdcCurve(fmr, thr.threshold, thr.achieved_fmr, points, carried, thr.insufficient, quality_source)


def pauc(curve, max_discard=PAUC_MAX_DISCARD, extend=False):
    """Trapezoidal area under FNMR(discard) on ``[0, max_discard]`` (not normalized).

    With ``extend=True`` a curve ending before ``max_discard`` is continued
    along its last segment (clipped to [0, 1]).
    """
    pts = curve.points if isinstance(curve, EdcCurve) else list(curve)
    if not pts or pts[0][0] != 0:
        raise GridTooShort("curve must start at discard 0")
    xs = np.array([p[0] for p in pts], dtype=np.float64)
    ys = np.array([p[1] for p in pts], dtype=np.float64)
    if xs[-1] < max_discard:
        if not extend:
            raise GridTooShort(f"curve ends at {xs[-1]}, before {max_discard}")
        if len(xs) > 1:
            slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
            y_end = float(np.clip(ys[-1] + slope * (max_discard - xs[-1]), 0.0, 1.0))
        else:
            y_end = ys[-1]
        xs = np.append(xs, max_discard)
        ys = np.append(ys, y_end)
    area = 0.0
    for i in range(len(xs) - 1):
        x0, x1 = xs[i], xs[i + 1]
        if x0 >= max_discard:
            break
        y0, y1 = ys[i], ys[i + 1]
        if x1 > max_discard:
            y1 = y0 + (y1 - y0) * (max_discard - x0) / (x1 - x0)
            x1 = max_discard
        area += 0.5 * (y0 + y1) * (x1 - x0)
    return area


def verification_accuracy(genuine_scores, impostor_scores):
    """Best ``(accuracy, threshold)`` over midpoints between adjacent distinct scores and +/-inf.

    Accuracy ties go to the threshold farthest from its nearest score, then to
    the lowest threshold.
    """
    g = np.sort(np.asarray(genuine_scores, dtype=np.float64))
    i = np.sort(np.asarray(impostor_scores, dtype=np.float64))
    if g.size == 0 or i.size == 0:
        raise EmptyScores("need genuine and impostor scores")
    u = np.unique(np.concatenate([g, i]))
    mids = (u[:-1] + u[1:]) / 2.0
    cands = np.concatenate([[-math.inf], mids, [math.inf]])
    margins = np.concatenate([[math.inf], (u[1:] - u[:-1]) / 2.0, [math.inf]])
    tp = g.size - np.searchsorted(g, cands, side="left")
    tn = np.searchsorted(i, cands, side="left")
    acc = (tp + tn) / (g.size + i.size)
    best = int(np.lexsort((np.arange(cands.size), -margins, -acc))[0])
    return float(acc[best]), float(cands[best])


# ---------------------------------------------------------------- file formats


def write_pairs_csv(pairs, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id_a", "id_b", "genuine"])
        for a, b, gen in pairs:
            w.writerow([a, b, int(bool(gen))])


def read_pairs_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id_a", "id_b", "genuine"]:
            raise ValueError(f"{path}: expected header id_a,id_b,genuine")
        out = []
        for row in reader:
            if row["genuine"] not in ("0", "1"):
                raise ValueError(f"{path}: genuine must be 0 or 1, got {row['genuine']!r}")
            out.append(Pair(row["id_a"], row["id_b"], row["genuine"] == "1"))
    return out


def write_embeddings_csv(embeddings, path):
    from .scoring import fmt

    items = list(embeddings.items())
    d = len(items[0][1]) if items else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"v{j}" for j in range(d)])
        for sid, v in items:
            w.writerow([sid] + [fmt(x) for x in np.asarray(v, dtype=np.float64)])


def read_embeddings_csv(path):
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise ValueError(f"{path}: expected header id,v0,...")
        for row in reader:
            out[row[0]] = np.array([float(v) for v in row[1:]], dtype=np.float64)
    return out


def write_edc(curve, csv_path, json_path, pauc_max=PAUC_MAX_DISCARD, auc_max=AUC_MAX_DISCARD):
    from .scoring import fmt

    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["discard_fraction", "fnmr"])
        for d, f in curve.points:
            w.writerow([fmt(d), fmt(f)])
    last = curve.points[-1][0]
    sidecar = {
        "fmr_target": curve.fmr_target,
        "threshold": "+inf" if math.isinf(curve.threshold) else curve.threshold,
        "achieved_fmr": curve.achieved_fmr,
        "insufficient_impostors": curve.insufficient_impostors,
        "carried_forward_points": int(sum(curve.carried)),
        "pauc_max_discard": pauc_max,
        "pauc_x1e3": pauc(curve, pauc_max) * 1e3 if last >= pauc_max else None,
        "auc_max_discard": auc_max,
        "auc_x1e3": pauc(curve, auc_max) * 1e3 if last >= auc_max else None,
        "pauc_convention": "raw trapezoid of FNMR over [0, max_discard], x1e3, no normalization or baseline subtraction",
        "match_rule": "cosine >= threshold",
        "quality_source": curve.quality_source,
    }
    if curve.insufficient_impostors:
        sidecar["warning"] = "InsufficientImpostors"
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar
