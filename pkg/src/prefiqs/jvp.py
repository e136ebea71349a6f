"""First-order check of pruning drift via Jacobian-vector products.

Pruning is an additive perturbation of the flat parameters,
``delta_i = -theta_i * (1 - mask_i)``. The directional derivative of the
normalized embedding along ``delta`` is estimated by a central difference
evaluated on float64 copies of the model:

    jvp(x) = || M(theta + eps*delta, x) - M(theta - eps*delta, x) || / (2 * eps)

with ``eps`` chosen so that ``||eps * delta|| = step * ||theta||``.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .errors import EmptySampleSet, LengthMismatch, StepTooLarge, ZeroNorm
from .model import apply_mask, embed_batch, param_vector_view, with_param_vector
from .scoring import drift_batch, fmt, row_distances

DEFAULT_STEP = 1e-4
HALVING_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class PerturbationVector:
    delta: np.ndarray
    rho: float | None = None
    criterion: str | None = None

    def __len__(self):
        return len(self.delta)


def delta_theta(m, mask):
    bits = np.asarray(getattr(mask, "bits", mask))
    theta = param_vector_view(m).vector
    if bits.shape != theta.shape:
        raise LengthMismatch(f"mask has length {bits.size}, model has {theta.size} prunable parameters")
    delta = np.where(bits.astype(bool), theta.dtype.type(0), -theta)
    return PerturbationVector(delta, getattr(mask, "rho", None), getattr(mask, "criterion", None))


def _delta_array(dtheta):
    return np.asarray(getattr(dtheta, "delta", dtheta), dtype=np.float64)


def perturbation_epsilon(m, dtheta, step=DEFAULT_STEP):
    """``eps`` such that ``||eps * delta||_2 == step * ||theta||_2`` (0 for a zero direction)."""
    theta = param_vector_view(m).vector.astype(np.float64)
    delta = _delta_array(dtheta)
    if delta.shape != theta.shape:
        raise LengthMismatch("perturbation length differs from the parameter count")
    nd = float(np.linalg.norm(delta))
    if nd == 0.0:
        return 0.0
    eps = step * float(np.linalg.norm(theta)) / nd
    if eps >= 1.0:
        raise StepTooLarge(f"step {step} needs eps={eps:.3g} >= 1, overshooting the pruned weights")
    return eps


def perturbed_models(m, dtheta, step=DEFAULT_STEP):
    """Float64 models at ``theta +/- eps*delta`` and ``eps``; ``None`` models for a zero direction."""
    eps = perturbation_epsilon(m, dtheta, step)
    if eps == 0.0:
        return None, None, 0.0
    theta = param_vector_view(m).vector.astype(np.float64)
    delta = _delta_array(dtheta)
    plus = with_param_vector(m, theta + eps * delta)
    minus = with_param_vector(m, theta - eps * delta)
    return plus, minus, eps


def jvp_norms(m, dtheta, X, step=DEFAULT_STEP, workers=None):
    """Batched ``||J(x) . delta||`` for the rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    plus, minus, eps = perturbed_models(m, dtheta, step)
    if plus is None:
        return np.zeros(X.shape[0])
    ep, okp = embed_batch(plus, X, workers)
    em, okm = embed_batch(minus, X, workers)
    if not (okp.all() and okm.all()):
        raise ZeroNorm("degenerate embedding while differentiating")
    return row_distances(ep, em) / (2.0 * eps)


def jvp_norm(m, dtheta, x, step=DEFAULT_STEP):
    return float(jvp_norms(m, dtheta, np.asarray(x)[None], step, workers=1)[0])


def step_halving_gap(a, b):
    """Largest relative disagreement between two jvp estimates."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)
    gap = np.abs(a - b) / denom
    return float(gap.max()) if gap.size else 0.0


@dataclass
class ValidationReport:
    sample_ids: list
    jvp: np.ndarray
    drift: np.ndarray
    spearman: float
    mean_relative_gap: float
    correlation_defined: bool
    step: float
    step_halving_gap: float | None = None
    first_order_valid: bool | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        def num(x):
            return None if x is None or (isinstance(x, float) and math.isnan(x)) else x

        return {
            "n_samples": len(self.sample_ids),
            "spearman": num(self.spearman),
            "correlation_defined": self.correlation_defined,
            "mean_relative_gap": num(self.mean_relative_gap),
            "step": self.step,
            "step_halving_gap": self.step_halving_gap,
            "step_halving_tolerance": HALVING_TOL,
            "first_order_valid": self.first_order_valid,
            "mean_jvp": float(np.mean(self.jvp)),
            "mean_drift": float(np.mean(self.drift)),
            **self.extra,
        }


def spearman(a, b):
    """Spearman rank correlation; NaN when either side is constant."""
    a, b = np.asarray(a), np.asarray(b)
    if a.size < 2 or np.all(a == a[0]) or np.all(b == b[0]):
        return float("nan")
    return float(spearmanr(a, b).statistic)


def validate_first_order(m, mask, samples, step=DEFAULT_STEP, check_halving=True, workers=None):
    """Pair each sample's jvp norm with its empirical drift under ``mask``."""
    samples = list(samples)
    if not samples:
        raise EmptySampleSet("no samples to validate")
    ids = [str(s[0]) for s in samples]
    X = np.stack([np.asarray(s[1], dtype=np.float32) for s in samples])
    dtheta = delta_theta(m, mask)
    jv = jvp_norms(m, dtheta, X, step, workers)
    dr = drift_batch(m, apply_mask(m, mask), X, workers)
    rho = spearman(jv, dr)
    gap = float(np.mean(np.abs(jv - dr) / np.maximum(dr, 1e-12)))
    report = ValidationReport(ids, jv, dr, rho, gap, not math.isnan(rho), step)
    if check_halving:
        half = jvp_norms(m, dtheta, X, step / 2.0, workers)
        report.step_halving_gap = step_halving_gap(jv, half)
        report.first_order_valid = report.step_halving_gap <= HALVING_TOL
    return report


def write_jvp_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "jvp_norm", "empirical_drift"])
        for sid, j, d in zip(report.sample_ids, report.jvp, report.drift):
            w.writerow([sid, fmt(j), fmt(d)])


def write_report_json(report, path, **extra):
    with open(path, "w") as fh:
        json.dump({**report.to_json(), **extra}, fh, indent=2, sort_keys=True)
        fh.write("\n")
