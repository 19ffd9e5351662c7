"""Command-line entry point: generate, extract, train, evaluate, ablate, explain, gradcheck."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, parse_override_value
from .data import DataError, load_dataset, write_synthetic
from .dfc import extract_dataset, write_sequences
from .evaluation import (FoldPlan, FoldReport, inner_split, leakage_audit, make_folds, run_cv)
from .interpret import AttentionAggregate, merge_aggregates, read_roi_names, write_exports
from .train import train

log = logging.getLogger("dgatnet")

COMMANDS = ("generate", "extract", "train", "evaluate", "ablate", "explain", "gradcheck")


class CommandError(RuntimeError):
    def __init__(self, module: str, message: str):
        super().__init__(message)
        self.module = module


def _split_overrides(extra: list[str]) -> dict:
    overrides = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognized argument {tok!r}")
        key, sep, value = tok[2:].partition("=")
        if not sep:
            try:
                value = next(it)
            except StopIteration:
                raise ConfigError(f"override {tok!r} needs a value") from None
        overrides[key] = parse_override_value(value)
    return overrides


def _run_dir(args) -> Path:
    name = args.name or time.strftime("%Y%m%d-%H%M%S")
    path = Path(args.runs_dir) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(cfg: RunConfig, out: Path) -> None:
    (out / "config.json").write_text(cfg.to_json() + "\n")


def _load_data(cfg: RunConfig):
    if not cfg.data.dir:
        raise CommandError("data_model", "no data directory (use --data or data.dir)")
    try:
        return load_dataset(cfg.data.dir, cfg.data.labels or None)
    except (DataError, OSError) as exc:
        raise CommandError("data_model", str(exc)) from None


def _sequences(cfg: RunConfig, dataset, static: bool = False):
    try:
        return extract_dataset(dataset, cfg.window, cfg.graph, static=static)
    except ValueError as exc:
        raise CommandError("dfc", str(exc)) from None


# ---------------------------------------------------------------------------
# writers

def write_predictions(reports: list[FoldReport], path: Path) -> None:
    seeds = reports[0].seeds
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "fold", "label"] + [f"vote_seed{s}" for s in seeds]
                   + ["ensemble", "mean_prob"])
        for r in reports:
            for j, sid in enumerate(r.subject_ids):
                w.writerow([sid, r.fold, int(r.labels[j])]
                           + [int(v) for v in r.seed_labels[:, j]]
                           + [int(r.ensemble_labels[j]), repr(float(r.mean_probs[j, 1]))])


def write_attention(reports: list[FoldReport], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for r in reports:
        agg = r.attention
        if agg is None:
            continue
        ids = list(agg.temporal_profiles)
        np.savez(out / f"fold_{r.fold:02d}.npz", heatmaps=agg.heatmaps,
                 roi_importance=agg.roi_importance, incoming_importance=agg.incoming_importance,
                 profile_ids=np.array(ids), profiles=np.vstack([agg.temporal_profiles[i] for i in ids]))


def read_attention(run_dir: Path) -> list[AttentionAggregate]:
    parts = []
    for path in sorted((run_dir / "attention").glob("fold_*.npz")):
        with np.load(path) as z:
            profiles = {str(i): row for i, row in zip(z["profile_ids"], z["profiles"])}
            parts.append(AttentionAggregate(z["heatmaps"], z["roi_importance"],
                                            z["incoming_importance"], profiles, "fold"))
    return parts


def write_cv_outputs(reports, summary, plan: FoldPlan, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    problems = leakage_audit(plan, reports)
    summary = dict(summary, leakage_audit={"ok": not problems, "problems": problems})
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_predictions(reports, out / "predictions.csv")
    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    for r in reports:
        for run in r.runs:
            (curves / f"fold{r.fold:02d}_seed{run.seed}.csv").write_text(run.curve_csv)
    write_attention(reports, out / "attention")
    splits = {"folds": plan.folds, "plan_seed": plan.plan_seed, "inner": [
        {"fold": r.fold, "seed": run.seed, "train": run.train_idx, "validation": run.val_idx}
        for r in reports for run in r.runs]}
    (out / "folds.json").write_text(json.dumps(splits) + "\n")


def _cv(cfg: RunConfig, seqs, plan: FoldPlan, keep_attention: bool = True):
    try:
        return run_cv(seqs, cfg.eval, cfg.train, cfg.model, plan=plan,
                      keep_attention=keep_attention)
    except RuntimeError as exc:
        raise CommandError("evaluation", str(exc)) from None


# ---------------------------------------------------------------------------
# commands

def cmd_generate(cfg: RunConfig, args) -> int:
    out = Path(args.out or cfg.data.dir or "data/synthetic")
    try:
        ds = write_synthetic(cfg.synthetic, out)
    except DataError as exc:
        raise CommandError("data_model", str(exc)) from None
    print(f"wrote {len(ds)} subjects ({cfg.synthetic.n_rois} ROIs) to {out}")
    return 0


def cmd_extract(cfg: RunConfig, args) -> int:
    dataset = _load_data(cfg)
    out = Path(args.out) if args.out else _run_dir(args) / "graphs"
    seqs = _sequences(cfg, dataset, static=args.static)
    write_sequences(seqs, out)
    _echo_config(cfg, out)
    print(f"wrote {len(seqs)} graph sequences (T={seqs[0].T}) to {out}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    dataset = _load_data(cfg)
    seqs = _sequences(cfg, dataset)
    labels = dataset.labels
    tr, va = inner_split(range(len(seqs)), labels, cfg.eval.val_fraction, [cfg.eval.plan_seed, 0, 2])
    seed = cfg.eval.seeds[0]
    fitted = train([seqs[i] for i in tr], [seqs[i] for i in va], cfg.train, cfg.model, seed=seed)
    out = _run_dir(args)
    _echo_config(cfg, out)
    (out / "checkpoint.json").write_text(fitted.model.store.to_json())
    (out / "curve.csv").write_text(fitted.curve_csv())
    print(f"best epoch {fitted.best_epoch}, validation balanced accuracy "
          f"{fitted.best_val_balacc:.4f}; outputs in {out}")
    return 0


def _print_summary(label: str, summary: dict) -> None:
    agg = summary["aggregate"]
    parts = []
    for name in ("balanced_accuracy", "precision", "recall", "f1", "auc"):
        m = agg[name]
        parts.append(f"{name}={m['mean']:.4f}±{m['sd']:.4f}" if m["mean"] is not None
                     else f"{name}=n/a")
    print(f"{label}: " + " ".join(parts))


def cmd_evaluate(cfg: RunConfig, args) -> int:
    dataset = _load_data(cfg)
    seqs = _sequences(cfg, dataset, static=args.static)
    plan = make_folds(dataset.labels, cfg.eval.k, cfg.eval.plan_seed)
    out = _run_dir(args)
    _echo_config(cfg, out)
    reports, summary = _cv(cfg, seqs, plan)
    write_cv_outputs(reports, summary, plan, out)
    _print_summary("ensemble", summary)
    print(f"outputs in {out}")
    return 0


ABLATION_METRICS = ("balanced_accuracy", "precision", "recall", "f1", "auc")


def cmd_ablate(cfg: RunConfig, args) -> int:
    dataset = _load_data(cfg)
    plan = make_folds(dataset.labels, cfg.eval.k, cfg.eval.plan_seed)
    out = _run_dir(args)
    _echo_config(cfg, out)
    rows = {}
    for variant, static in (("full", False), ("static_fc", True)):
        seqs = _sequences(cfg, dataset, static=static)
        reports, summary = _cv(cfg, seqs, plan, keep_attention=not static)
        write_cv_outputs(reports, summary, plan, out / variant)
        rows[variant] = summary["aggregate"]
        if variant == "full":
            # the first seed's replicas alone, on the same folds
            rows["no_ensemble"] = summary["single_seed"]
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant"] + [f"{m}_{s}" for m in ABLATION_METRICS for s in ("mean", "sd")])
        for variant in ("static_fc", "no_ensemble", "full"):
            agg = rows[variant]
            w.writerow([variant] + [("" if agg[m][s] is None else repr(agg[m][s]))
                                    for m in ABLATION_METRICS for s in ("mean", "sd")])
    for variant in ("static_fc", "no_ensemble", "full"):
        _print_summary(variant, {"aggregate": rows[variant]})
    print(f"outputs in {out}")
    return 0


def cmd_explain(cfg: RunConfig, args) -> int:
    if not args.run:
        raise CommandError("interpret", "explain needs --run <evaluate run directory>")
    run_dir = Path(args.run)
    parts = read_attention(run_dir)
    if not parts:
        raise CommandError("interpret", f"no attention records under {run_dir / 'attention'}")
    agg = merge_aggregates(parts)
    names = read_roi_names(cfg.data.roi_names) if cfg.data.roi_names else None
    out = Path(args.out) if args.out else run_dir / "explain"
    paths = write_exports(agg, out, layer=cfg.interpret.layer, top_k=cfg.interpret.top_k,
                          roi_names=names)
    _echo_config(cfg, out)
    for p in paths.values():
        print(p)
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    from .gradsuite import TOLERANCE, run_suite

    results = run_suite(points=args.points)
    worst = 0.0
    for name, err in results.items():
        flag = "ok" if err <= TOLERANCE else "FAIL"
        print(f"{name:28s} {err:.3e} {flag}")
        worst = max(worst, err)
    print(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    return 0 if worst <= TOLERANCE else 1


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgatnet", description=__doc__,
        epilog="Any config key can be overridden with --section.field=value.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON file of dotted config keys")
    parser.add_argument("--data", help="subject CSV directory (sets data.dir)")
    parser.add_argument("--labels", help="labels CSV (default <data>/labels.csv)")
    parser.add_argument("--runs-dir", default="runs")
    parser.add_argument("--name", help="run directory name (default: timestamp)")
    parser.add_argument("--out", help="output directory for generate/extract/explain")
    parser.add_argument("--run", help="evaluate run directory for explain")
    parser.add_argument("--jobs", type=int, help="parallel fold x seed replicas")
    parser.add_argument("--static", action="store_true", help="use whole-series static FC")
    parser.add_argument("--points", type=int, default=25, help="gradcheck random points")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _split_overrides(extra)
        if args.data:
            overrides["data.dir"] = args.data
        if args.labels:
            overrides["data.labels"] = args.labels
        if args.jobs is not None:
            overrides["eval.jobs"] = args.jobs
        cfg = load_config(args.config, overrides)
        return HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
    except CommandError as exc:
        print(f"error [{exc.module}]: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
    return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
