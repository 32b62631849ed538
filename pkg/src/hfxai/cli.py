"""Command line: ``hfxai run|explain|metrics``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .metrics import ConfusionMatrix, classification_metrics, explainability_score, fir, interpretability
from .report import (
    ConfigError,
    RunConfig,
    canonical_json,
    emit_report,
    explain_saved,
    load_dataset,
    read_config_file,
    run,
)
from .tabular import ParseError, SchemaError

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("hfxai")


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hfxai", description="Ensemble-tree search with explainability scoring.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--data", help="CSV with the heart-failure columns")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--config", help="key = value file; its values override flags")

    r = sub.add_parser("run", help="full pipeline: search, score, pick, test, explain")
    common(r)
    r.add_argument("--test-ratio", type=float)
    r.add_argument("--folds", type=int)
    r.add_argument("--scoring")
    r.add_argument("--no-feature-selection", action="store_true")
    r.add_argument("--drop-feature", action="append", default=[], metavar="NAME")

    e = sub.add_parser("explain", help="explainers on a saved model.json over a dataset")
    common(e)
    e.add_argument("--model", required=True)

    m = sub.add_parser("metrics", help="recompute metrics from a CSV ledger")
    m.add_argument("ledger", help="CSV with tp,tn,fp,fn and/or selected,total,fidelity|bacc_tree,bacc_model")
    m.add_argument("--out", help="write JSON here instead of stdout")
    return p


def build_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "data", None):
        overrides["data_path"] = args.data
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["out_dir"] = args.out
    if getattr(args, "test_ratio", None) is not None:
        overrides["test_ratio"] = args.test_ratio
    if getattr(args, "folds", None) is not None:
        overrides["folds"] = args.folds
    if getattr(args, "scoring", None):
        overrides["scoring"] = args.scoring
    if getattr(args, "no_feature_selection", False):
        overrides["feature_selection"] = False
    if getattr(args, "drop_feature", None):
        overrides["drop_features"] = tuple(args.drop_feature)
    from_file = read_config_file(args.config) if args.config else {}
    data_path = from_file.get("data_path", overrides.pop("data_path", None))
    if not data_path:
        raise UsageError("no data path: pass --data or set data_path in the config file")
    cfg = RunConfig(data_path=data_path, **overrides)
    return cfg.with_overrides({k: v for k, v in from_file.items() if k != "data_path"})


def _cmd_run(args) -> int:
    cfg = build_config(args)
    ds = load_dataset(cfg)
    last = [0]

    def progress(done, total):
        pct = done * 10 // total
        if pct != last[0]:
            last[0] = pct
            log.info("grid search %d/%d", done, total)

    report = run(cfg, ds, progress)
    manifest = emit_report(report, cfg.out_dir)
    log.info("wrote %d files to %s", len(manifest) + 1, cfg.out_dir)
    if not report.ok:
        print(f"run failed at stage {report.failure['stage']}: {report.failure['error']}", file=sys.stderr)
        return EXIT_INTERNAL
    mb = report.sections["most_balanced"]
    print(f"most balanced: {mb['label']} FIR={mb['fir']:.3f} "
          f"test balanced_accuracy={mb['test_metrics']['balanced_accuracy']:.3f}")
    return EXIT_OK


def _cmd_explain(args) -> int:
    cfg = build_config(args)
    if not Path(args.model).is_file():
        raise UsageError(f"model file not found: {args.model}")
    report = explain_saved(args.model, cfg.data_path, cfg)
    emit_report(report, cfg.out_dir)
    return EXIT_OK


def ledger_metrics(path: str | Path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh), start=1):
            row = {k.strip(): v.strip() for k, v in row.items() if k and v is not None and v.strip()}
            rec: dict = {"name": row.get("name", str(i))}
            try:
                if {"tp", "tn", "fp", "fn"} <= row.keys():
                    cm = ConfusionMatrix(*(int(row[k]) for k in ("tp", "tn", "fp", "fn")))
                    rec["metrics"] = classification_metrics(cm).to_dict()
                if {"selected", "total"} <= row.keys():
                    sel, tot = int(row["selected"]), int(row["total"])
                    if "fidelity" in row:
                        i_score = interpretability(sel, tot)
                        f = float(row["fidelity"])
                        rec.update(interpretability=i_score, fidelity=f, fir=fir(f, i_score))
                    elif {"bacc_tree", "bacc_model"} <= row.keys():
                        rec.update(explainability_score(sel, tot, float(row["bacc_tree"]),
                                                        float(row["bacc_model"])).to_dict())
            except (ValueError, ZeroDivisionError) as e:
                raise UsageError(f"{path}: ledger row {i}: {e}") from None
            out.append(rec)
    return out


def _cmd_metrics(args) -> int:
    if not Path(args.ledger).is_file():
        raise UsageError(f"ledger not found: {args.ledger}")
    text = canonical_json(ledger_metrics(args.ledger))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "explain": _cmd_explain, "metrics": _cmd_metrics}[args.command]
    try:
        return handler(args)
    except (UsageError, ConfigError, ParseError, SchemaError, FileNotFoundError, IsADirectoryError) as e:
        print(f"hfxai: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"hfxai: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
