"""Command-line entry point: ``phydnn {gen,train,gridsearch,sweep,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness as H
from .data import DataError


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _train_config(args, doc: dict) -> H.TrainConfig:
    train_doc = dict(doc.get("train", doc))
    for key in ("sweep", "grid", "train"):
        train_doc.pop(key, None)
    cfg = H.TrainConfig.from_dict(train_doc)
    if args.model:
        cfg = replace(cfg, model=args.model)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.train_frac is not None:
        cfg = replace(cfg, train_fraction=args.train_frac)
    if args.use_phy is not None:
        cfg = replace(cfg, use_phy=args.use_phy)
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, epochs=args.epochs)
    if args.data:
        cfg = replace(cfg, data=H.DataSource(csv=args.data))
    return cfg


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with TrainConfig (and SweepSpec) fields")
    p.add_argument("--data", help="dataset CSV; default is the synthetic oracle")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", choices=H.MODEL_KINDS)
    p.add_argument("--train-frac", type=float)
    p.add_argument("--use-phy", type=_bool)
    p.add_argument("--epochs", type=int)


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "data.csv"
    H.generate(args.n, args.seed if args.seed is not None else 0, args.noise_sigma, path)
    print(f"wrote {args.n} samples to {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args, _read_config(args.config))
    result = H.train(cfg)
    H.write_train_outputs(result, args.out)
    sys.stdout.write(result.report.to_text())
    return 0


def cmd_gridsearch(args) -> int:
    doc = _read_config(args.config)
    cfg = _train_config(args, doc)
    grid = doc.get("grid", {})
    res = H.gridsearch(cfg, grid.get("lambda_P_grid", H.DEFAULT_LAMBDA_GRID),
                       grid.get("lambda_V_grid", H.DEFAULT_LAMBDA_GRID),
                       grid.get("validation_fraction", 0.2))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    H.write_rows(out / "gridsearch.csv", res.rows, ["lambda_P", "lambda_V", "val_aurec"])
    H.write_json(out / "best.json", {"lambda_P": res.best[0], "lambda_V": res.best[1]})
    print(f"best lambda_P={res.best[0]:g} lambda_V={res.best[1]:g}")
    return 0


def cmd_sweep(args) -> int:
    doc = _read_config(args.config)
    cfg = _train_config(args, doc)
    spec = H.SweepSpec.from_dict(doc.get("sweep", {}))
    rows = H.sweep(spec, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    H.write_rows(out / "sweep.csv", rows, H.SWEEP_COLUMNS)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} sweep rows written ({failed} failed)")
    return 0


def cmd_report(args) -> int:
    fitted = H.FittedModel.load(args.checkpoint)
    compare = H.FittedModel.load(args.compare) if args.compare else None
    if args.data:
        raw = H.DataSource(csv=args.data).load()
    elif fitted.config is not None:
        raw = fitted.config.data.load()
    else:
        raise DataError("no --data given and the checkpoint records no data source")
    bundle = H.build_report(fitted, raw, compare, bins=args.bins)
    H.write_report(bundle, args.out)
    for notice in bundle.notices:
        print(f"notice: {notice}")
    sys.stdout.write(bundle.metrics.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phydnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic-oracle dataset CSV")
    p.add_argument("--n", type=int, default=5824)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--out", required=True, help="output directory (writes data.csv)")
    p.set_defaults(func=cmd_gen)

    for name, func, text in (("train", cmd_train, "train one model and evaluate on the test split"),
                             ("gridsearch", cmd_gridsearch, "grid-search lambda_P and lambda_V"),
                             ("sweep", cmd_sweep, "train over fractions x seeds x models")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="per-regime analyses for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--compare", help="second checkpoint for the AU-REC improvement grid")
    p.add_argument("--data", help="dataset CSV; default is the checkpoint's data source")
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=64)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, ValueError, OSError, H.TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
