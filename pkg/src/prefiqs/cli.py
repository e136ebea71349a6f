"""``prefiqs`` command line: synth, prune, embed, score, jvp, edc and verify.

Every command writes a ``manifest_<command>.json`` next to its outputs that
records the resolved parameters, input/output paths with SHA-256 digests, the
tool version and wall-clock timing. Data files never contain timestamps, so
reruns with the same inputs and flags are byte-identical.

Exit codes: 0 success, 2 usage or validation error, 3 I/O error, 4 domain error.
"""

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
import warnings
from dataclasses import replace
from datetime import datetime, timezone

from . import __version__
from . import evaluation as ev
from . import jvp as jvp_mod
from . import pruning, scoring, synthlab
from .errors import ConfigInvalid, FormatError, InsufficientImpostors, PrefiqsError, RhoOutOfRange, ZeroNorm
from .kernels import BACKEND
from .model import embed_batch, read_model, write_model
from .svg import write_svg

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DOMAIN = 0, 2, 3, 4

log = logging.getLogger("prefiqs")


class UsageError(Exception):
    """Flag combination rejected after argparse accepted the individual values."""


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_manifest(out_dir, command, params, inputs, outputs, started, t0):
    manifest = {
        "command": command,
        "parameters": params,
        "inputs": {k: {"path": v, "sha256": _sha256(v)} for k, v in inputs.items()},
        "outputs": {k: {"path": v, "sha256": _sha256(v)} for k, v in outputs.items()},
        "tool_version": __version__,
        "kernel_backend": BACKEND,
        "threads": os.environ.get("PREFIQS_THREADS"),
        "wall_clock": {"started_utc": started, "elapsed_seconds": round(time.perf_counter() - t0, 6)},
    }
    path = os.path.join(out_dir, f"manifest_{command}.json")
    _write_json(path, manifest)
    return path


def _json_float(x):
    """Infinite thresholds are written as the strings ``"+inf"`` / ``"-inf"``."""
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return x


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _samples(path):
    data = synthlab.read_dataset_csv(path)
    if not data.samples:
        raise ConfigInvalid(f"{path} has no samples")
    return data


def _rho(value):
    try:
        return pruning.check_rho(float(value))
    except (ValueError, RhoOutOfRange) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _fraction(value):
    v = float(value)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1], got {value}")
    return v


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    cfg = synthlab.fixture_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, synth=replace(cfg.synth, seed=args.seed))
    out = _out_dir(args.out)
    data, result, pairs = synthlab.build_fixture(cfg)
    paths = {
        "dataset": os.path.join(out, "dataset.csv"),
        "model": os.path.join(out, "model.pfqm"),
        "pairs": os.path.join(out, "pairs.csv"),
        "training": os.path.join(out, "training.json"),
    }
    synthlab.write_dataset_csv(data, paths["dataset"])
    write_model(result.model, paths["model"])
    ev.write_pairs_csv(pairs, paths["pairs"])
    _write_json(paths["training"], {"losses": result.losses, "train_accuracy": result.accuracy,
                                    "n_samples": len(data.samples), "n_pairs": len(pairs)})
    inputs = {"config": args.config} if args.config else {}
    return out, cfg.to_json(), inputs, paths


def cmd_prune(args):
    if args.criterion == pruning.RANDOM and args.seed is None:
        raise UsageError("--criterion random requires --seed")
    if args.criterion == pruning.RANDOM and args.granularity == pruning.STRUCTURED:
        raise UsageError("structured pruning supports --criterion l1 only")
    m = read_model(args.model)
    out = _out_dir(args.out)
    pruned, what = pruning.prune_model(m, args.ratio, args.criterion, args.granularity, args.seed)
    paths = {"model": os.path.join(out, "pruned.pfqm")}
    write_model(pruned, paths["model"])
    if args.granularity == pruning.STRUCTURED:
        paths["plan"] = os.path.join(out, "plan.json")
        _write_json(paths["plan"], what.to_json())
    else:
        paths["mask"] = os.path.join(out, "pruned.pfqmask")
        with open(paths["mask"], "wb") as fh:
            fh.write(pruning.save_mask(what))
    params = {"ratio": args.ratio, "criterion": args.criterion, "granularity": args.granularity,
              "seed": args.seed}
    return out, params, {"model": args.model}, paths


def cmd_embed(args):
    m = read_model(args.model)
    data = _samples(args.inputs)
    E, ok = embed_batch(m, data.X)
    if not ok.all():
        bad = [sid for sid, good in zip(data.ids, ok) if not good]
        raise ZeroNorm(f"zero-norm embedding for {bad[:5]}")
    out_dir = _out_dir(os.path.dirname(os.path.abspath(args.out)))
    ev.write_embeddings_csv(dict(zip(data.ids, E)), args.out)
    return out_dir, {}, {"model": args.model, "inputs": args.inputs}, {"embeddings": args.out}


def cmd_score(args):
    m = read_model(args.model)
    pruned = read_model(args.pruned)
    data = _samples(args.inputs)
    records = scoring.batch_score(m, pruned, [(s.id, s.x) for s in data.samples])
    out_dir = _out_dir(os.path.dirname(os.path.abspath(args.out)))
    scoring.write_scores_csv(records, args.out)
    failed = [r for r in records if not r.ok]
    if failed:
        log.warning("%d sample(s) could not be scored", len(failed))
    params = {"n_samples": len(records), "n_failed": len(failed)}
    return out_dir, params, {"model": args.model, "pruned": args.pruned, "inputs": args.inputs}, {"scores": args.out}


def cmd_jvp(args):
    if args.criterion == pruning.RANDOM and args.seed is None:
        raise UsageError("--criterion random requires --seed")
    if not args.step > 0:
        raise UsageError("--step must be positive")
    m = read_model(args.model)
    data = _samples(args.inputs)
    if args.criterion == pruning.RANDOM:
        mask = pruning.build_mask_random(m, args.ratio, args.seed)
    else:
        mask = pruning.build_mask_l1_global(m, args.ratio)
    report = jvp_mod.validate_first_order(m, mask, [(s.id, s.x) for s in data.samples], args.step)
    out = _out_dir(args.out)
    paths = {"jvp": os.path.join(out, "jvp.csv"), "report": os.path.join(out, "jvp_report.json")}
    jvp_mod.write_jvp_csv(report, paths["jvp"])
    degenerate = mask.count_zeros() == 0
    jvp_mod.write_report_json(report, paths["report"], ratio=args.ratio, criterion=args.criterion,
                              pruned_count=mask.count_zeros(), degenerate_direction=degenerate)
    params = {"ratio": args.ratio, "criterion": args.criterion, "seed": args.seed, "step": args.step}
    return out, params, {"model": args.model, "inputs": args.inputs}, paths


def edc_grid(step, max_discard):
    """``0, step, 2*step, ...`` up to ``max_discard`` (inclusive within rounding)."""
    n = int(math.floor(max_discard / step + 1e-9))
    return [round(i * step, 12) for i in range(n + 1)]


def _area(curve, limit, step):
    """pAUC x 1e3 up to ``limit``; a curve ending less than one grid step short is
    continued along its last segment, a shorter one yields ``None``."""
    last = curve.points[-1][0]
    if last >= limit:
        return ev.pauc(curve, limit) * 1e3, False
    if limit - last < step - 1e-12:
        return ev.pauc(curve, limit, extend=True) * 1e3, True
    return None, False


def cmd_edc(args):
    if not 0.0 < args.fmr < 1.0:
        raise UsageError("--fmr must lie in (0, 1)")
    embeddings = ev.read_embeddings_csv(args.embeddings)
    pairs = ev.read_pairs_csv(args.pairs)
    qualities = scoring.read_scores_csv(args.scores)
    grid = edc_grid(args.grid_step, args.grid_max)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", InsufficientImpostors)
        curve = ev.edc_curve(embeddings, pairs, qualities, args.fmr, grid, quality_source=args.scores)
    for w in caught:
        log.warning("%s", w.message)
    out = _out_dir(args.out)
    paths = {"edc": os.path.join(out, "edc.csv"), "sidecar": os.path.join(out, "edc.json")}
    sidecar = ev.write_edc(curve, paths["edc"], paths["sidecar"], args.max_discard)
    pauc, pauc_ext = _area(curve, args.max_discard, args.grid_step)
    auc, auc_ext = _area(curve, ev.AUC_MAX_DISCARD, args.grid_step)
    sidecar.update(pauc_x1e3=pauc, auc_x1e3=auc, pauc_extended=pauc_ext, auc_extended=auc_ext,
                   grid_step=args.grid_step, grid_max=args.grid_max)
    _write_json(paths["sidecar"], sidecar)
    if args.svg:
        paths["svg"] = os.path.join(out, "edc.svg")
        write_svg(paths["svg"], curve.points, title=f"EDC at FMR {args.fmr:g}", y_max=1.0)
    params = {"fmr": args.fmr, "grid_step": args.grid_step, "grid_max": args.grid_max,
              "max_discard": args.max_discard}
    inputs = {"embeddings": args.embeddings, "pairs": args.pairs, "scores": args.scores}
    return out, params, inputs, paths


def cmd_verify(args):
    m = read_model(args.model)
    data = _samples(args.inputs)
    pairs = ev.read_pairs_csv(args.pairs)
    E, ok = embed_batch(m, data.X)
    if not ok.all():
        raise ZeroNorm("zero-norm embedding while verifying")
    scores, genuine = ev.pair_scores(dict(zip(data.ids, E)), pairs)
    acc, thr = ev.verification_accuracy(scores[genuine], scores[~genuine])
    at_fmr = []
    for fmr in args.fmr:
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always", InsufficientImpostors)
            t = ev.threshold_at_fmr(scores[~genuine], fmr)
        at_fmr.append({"fmr_target": fmr, "threshold": _json_float(t.threshold),
                       "achieved_fmr": t.achieved_fmr, "insufficient_impostors": t.insufficient,
                       "fnmr": ev.fnmr_at_threshold(scores[genuine], t.threshold)})
    report = {"accuracy": acc, "best_threshold": _json_float(thr),
              "n_genuine": int(genuine.sum()), "n_impostor": int((~genuine).sum()), "at_fmr": at_fmr}
    out = _out_dir(args.out)
    paths = {"report": os.path.join(out, "verify.json")}
    _write_json(paths["report"], report)
    return out, {"fmr": args.fmr}, {"model": args.model, "inputs": args.inputs, "pairs": args.pairs}, paths


# ---------------------------------------------------------------- entry point


def build_parser():
    p = argparse.ArgumentParser(prog="prefiqs", description="Pruning-drift image utility toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the synthetic dataset, pairs and a trained model")
    s.add_argument("--config", help="fixture config JSON (default: bundled standard fixture)")
    s.add_argument("--seed", type=int, help="override the dataset seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prune", help="prune a model and write the mask or structured plan")
    s.add_argument("--model", required=True)
    s.add_argument("--ratio", type=_rho, required=True)
    s.add_argument("--criterion", choices=[pruning.L1, pruning.RANDOM], default=pruning.L1)
    s.add_argument("--granularity", choices=[pruning.UNSTRUCTURED, pruning.STRUCTURED],
                   default=pruning.UNSTRUCTURED)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prune)

    s = sub.add_parser("embed", help="write the embeddings CSV of a dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--inputs", required=True)
    s.add_argument("--out", required=True, help="embeddings CSV path")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("score", help="drift and quality per sample")
    s.add_argument("--model", required=True)
    s.add_argument("--pruned", required=True)
    s.add_argument("--inputs", required=True)
    s.add_argument("--out", required=True, help="scores CSV path")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("jvp", help="compare first-order drift estimates with measured drift")
    s.add_argument("--model", required=True)
    s.add_argument("--ratio", type=_rho, default=0.1)
    s.add_argument("--criterion", choices=[pruning.L1, pruning.RANDOM], default=pruning.L1)
    s.add_argument("--seed", type=int)
    s.add_argument("--inputs", required=True)
    s.add_argument("--step", type=float, default=jvp_mod.DEFAULT_STEP)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_jvp)

    s = sub.add_parser("edc", help="error-versus-discard curve and pAUC")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--scores", required=True)
    s.add_argument("--fmr", type=float, default=ev.DEFAULT_FMR)
    s.add_argument("--grid-step", type=_fraction, default=0.01)
    s.add_argument("--grid-max", type=float, default=None,
                   help="last discard fraction of the curve (default: max(--max-discard, 0.95))")
    s.add_argument("--max-discard", type=_fraction, default=ev.PAUC_MAX_DISCARD)
    s.add_argument("--svg", action="store_true", help="also write edc.svg")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_edc)

    s = sub.add_parser("verify", help="verification accuracy and FNMR at fixed FMRs")
    s.add_argument("--model", required=True)
    s.add_argument("--inputs", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--fmr", type=float, nargs="+", default=[ev.DEFAULT_FMR])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="prefiqs: %(levelname)s: %(message)s")
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    try:
        if args.command == "edc" and args.grid_max is None:
            args.grid_max = max(args.max_discard, ev.AUC_MAX_DISCARD)
        out, params, inputs, outputs = args.func(args)
        write_manifest(out, args.command, params, inputs, outputs, started, t0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"prefiqs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigInvalid as exc:
        print(f"prefiqs: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, ValueError) as exc:
        if isinstance(exc, PrefiqsError) and not isinstance(exc, FormatError):
            print(f"prefiqs: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_DOMAIN
        print(f"prefiqs: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PrefiqsError, KeyError) as exc:
        print(f"prefiqs: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
