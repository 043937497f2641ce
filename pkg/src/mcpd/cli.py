"""Command-line entry point: ``mcpd {gen-data,label,train,predict,evaluate,report}``.

Settings come from defaults, then an optional TOML run-config (``--config``),
then command-line flags. Exit codes: 0 success, 1 usage error, 2 data or
schema error, 3 training error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bocpd import CpdConfig
from .errors import SchemaError, TrainingError
from .evalkit import (
    SyntheticConfig,
    comparison_csv,
    generate_synthetic,
    run_comparison,
    stratified_split,
    threshold_sweep_csv,
)
from .labeling import LABEL_TARGETS, label_cohort, labels_csv, labels_for_target
from .pipeline import (
    McpdConfig,
    Embedder,
    Standardizer,
    change_probabilities,
    featurize_cohort,
    fit,
    load_checkpoint,
    period_weights,
    predict_cohort,
    save_checkpoint,
)
from .records import N_PERIODS, cohort_report, load_records, save_records

log = logging.getLogger("mcpd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunConfig:
    """Everything a subcommand may need; see README for the TOML layout."""

    input: str | None = None
    output: str | None = None
    checkpoint: str | None = None
    report: str | None = None
    label_target: str = "dropout"
    label_fraction: float = 0.15
    test_fraction: float = 0.2
    threshold: float = 0.5
    seed: int = 0
    model: McpdConfig = field(default_factory=McpdConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def validate(self) -> None:
        if self.label_target not in LABEL_TARGETS:
            raise UsageError(f"label_target must be one of {LABEL_TARGETS}, got {self.label_target!r}")
        if not 0 < self.test_fraction < 1:
            raise UsageError("test_fraction must be in (0, 1)")


_TOP_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"model", "synthetic"}


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise SchemaError(f"config file not found: {p}")
    try:
        doc = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"{p}: {exc}") from None
    unknown = set(doc) - _TOP_KEYS - {"model", "synthetic"}
    if unknown:
        raise SchemaError(f"{p}: unknown keys {sorted(unknown)}")
    cfg = RunConfig(**{k: v for k, v in doc.items() if k in _TOP_KEYS})
    try:
        if "model" in doc:
            model = dict(doc["model"])
            if "cpd" in model:
                cpd = {**McpdConfig().to_dict()["cpd"], **model["cpd"]}
                model["cpd"] = cpd
            cfg.model = McpdConfig.from_dict(model)
        if "synthetic" in doc:
            cfg.synthetic = SyntheticConfig(**doc["synthetic"])
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{p}: {exc}") from None
    return cfg


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    for name in ("input", "output", "checkpoint", "report", "label_target", "test_fraction", "threshold",
                 "label_fraction"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    model_over: dict[str, Any] = {}
    for name in ("epochs", "gamma", "weight_mode", "cpd_input", "lr", "batch_size"):
        val = getattr(args, name, None)
        if val is not None:
            model_over[name] = val
    if getattr(args, "hazard_lambda", None) is not None:
        model_over["cpd"] = dataclasses.replace(cfg.model.cpd, hazard_lambda=args.hazard_lambda)
    syn_over: dict[str, Any] = {}
    for flag, name in (("n", "n_students"), ("positive_rate", "positive_rate"),
                       ("shift", "shift_magnitude"), ("vocab_shift", "vocab_shift")):
        val = getattr(args, flag, None)
        if val is not None:
            syn_over[name] = val
    # one seed drives every random stream; flag beats file, file beats 0
    if args.seed is not None:
        cfg.seed = args.seed
    model_over["seed"] = cfg.seed
    syn_over["seed"] = cfg.seed
    try:
        cfg.model = cfg.model.replace(**model_over)
        cfg.synthetic = dataclasses.replace(cfg.synthetic, **syn_over)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg.validate()
    return cfg


def _require(value: str | None, what: str) -> str:
    if not value:
        raise UsageError(f"missing required setting: {what}")
    return value


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8", newline="")


def _load_cohort(path: str):
    p = Path(path)
    if not p.is_file():
        raise SchemaError(f"input file not found: {p}")
    return load_records(p)


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, args) -> None:
    out = _require(cfg.output, "--out")
    cohort = generate_synthetic(cfg.synthetic)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_records(cohort, out)
    log.info("wrote %d records (%d at risk) to %s", len(cohort),
             sum(r.dropout_next_year for r in cohort), out)


def cmd_label(cfg: RunConfig, args) -> None:
    cohort = _load_cohort(_require(cfg.input, "--input"))
    _write_text(cfg.output, labels_csv(label_cohort(cohort, cfg.label_fraction)))


def cmd_train(cfg: RunConfig, args) -> None:
    cohort = _load_cohort(_require(cfg.input, "--input"))
    ckpt = _require(cfg.checkpoint, "--checkpoint")
    labels = labels_for_target(cohort, cfg.label_target, cfg.label_fraction)
    train_ids, test_ids = stratified_split(cohort, labels, cfg.test_fraction, cfg.seed)
    model, report = fit(cohort.subset(train_ids), labels, cfg.model,
                        validation=cohort.subset(test_ids), validation_labels=labels)
    Path(ckpt).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, ckpt)
    log.info("trained in %.2fs; checkpoint %s", report.seconds, ckpt)
    doc = report.to_dict()
    if not args.timing:
        doc.pop("seconds")
    doc.update(label_target=cfg.label_target, train_ids=len(train_ids), test_ids=len(test_ids))
    report_path = cfg.report or str(Path(ckpt).with_suffix(".report.json"))
    _write_text(report_path, json.dumps(doc, indent=1) + "\n")


def cmd_predict(cfg: RunConfig, args) -> None:
    model = load_checkpoint(_require(cfg.checkpoint, "--checkpoint"))
    cohort = _load_cohort(_require(cfg.input, "--input"))
    probs, changes = predict_cohort(model, cohort)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["student_id", "risk_probability"] + [f"p_{t}" for t in range(1, N_PERIODS + 1)])
    for sid, p, cp in zip(cohort.ids, probs, changes):
        w.writerow([sid, repr(float(p))] + [repr(float(v)) for v in cp])
    _write_text(cfg.output, buf.getvalue())


def cmd_evaluate(cfg: RunConfig, args) -> None:
    cohort = _load_cohort(_require(cfg.input, "--input"))
    labels = labels_for_target(cohort, cfg.label_target, cfg.label_fraction)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    rows = []
    for s in seeds:
        rows += run_comparison(cohort, labels, cfg.model.replace(seed=s), cfg.test_fraction, cfg.threshold)
    _write_text(cfg.output, comparison_csv(rows))
    if args.sweep:
        thresholds = [float(t) for t in args.sweep.split(",")]
        _write_text(_require(args.sweep_out, "--sweep-out"), threshold_sweep_csv(rows, thresholds))


def cmd_report(cfg: RunConfig, args) -> None:
    cohort = _load_cohort(_require(cfg.input, "--input"))
    out = Path(_require(cfg.output, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    labels = labels_for_target(cohort, cfg.label_target, cfg.label_fraction)
    rep = cohort_report(cohort, labels)
    _write_text(str(out / "difference.csv"), rep.to_csv())
    _write_text(str(out / "exclusive_tokens.txt"), rep.exclusive_text())
    if args.cpd:
        if cfg.checkpoint:
            model = load_checkpoint(cfg.checkpoint)
            mcfg, std, emb, params = model.config, model.standardizer, model.embedder, model.params
        else:
            mcfg = cfg.model
            if mcfg.cpd_input == "encoded":
                raise UsageError("cpd_input 'encoded' needs --checkpoint")
            std, emb, params = Standardizer.fit(cohort), Embedder.from_model_config(mcfg), None
        raw = featurize_cohort(cohort, std, emb)
        probs = change_probabilities(params, raw, mcfg)
        weights = period_weights(probs, mcfg)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["student_id", "period_index", "changepoint_probability", "attention_weight"])
        for sid, pr, wt in zip(cohort.ids, probs, weights):
            for t in range(N_PERIODS):
                w.writerow([sid, t + 1, repr(float(pr[t])), repr(float(wt[t]))])
        _write_text(str(out / "cpd.csv"), buf.getvalue())


COMMANDS = {
    "gen-data": cmd_gen_data,
    "label": cmd_label,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML run-config file")
    common.add_argument("--seed", type=int, help="seed for every random stream (default 0)")
    common.add_argument("--input", "--in", dest="input", help="record file (JSONL)")
    common.add_argument("--out", dest="output", help="output path ('-' for stdout)")
    common.add_argument("--label-target", choices=LABEL_TARGETS)
    common.add_argument("--label-fraction", type=float, help="bottom-percentile fraction for crisis labels")

    model = _Parser(add_help=False)
    model.add_argument("--epochs", type=int)
    model.add_argument("--lr", type=float)
    model.add_argument("--batch-size", type=int)
    model.add_argument("--gamma", type=float)
    model.add_argument("--weight-mode", choices=("affine", "direct", "softmax"))
    model.add_argument("--cpd-input", choices=("grades", "raw", "encoded"))
    model.add_argument("--hazard-lambda", type=float)
    model.add_argument("--test-fraction", type=float)

    parser = _Parser(prog="mcpd", description="Multimodal changepoint at-risk prediction toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic cohort")
    p.add_argument("--n", type=int, help="number of students")
    p.add_argument("--positive-rate", type=float)
    p.add_argument("--shift", type=float, help="planted shift magnitude")
    p.add_argument("--vocab-shift", action="store_true", default=None)

    sub.add_parser("label", parents=[common], help="compute dropout and crisis labels")

    p = sub.add_parser("train", parents=[common, model], help="train MCPD and write a checkpoint")
    p.add_argument("--checkpoint", help="checkpoint output path")
    p.add_argument("--report", help="training report path (default: <checkpoint>.report.json)")
    p.add_argument("--timing", action="store_true", help="include wall-clock seconds in the report")

    p = sub.add_parser("predict", parents=[common], help="score records with a checkpoint")
    p.add_argument("--checkpoint", help="checkpoint to load")

    p = sub.add_parser("evaluate", parents=[common, model], help="MCPD vs ablation vs logistic")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--threshold", type=float)
    p.add_argument("--sweep", help="comma-separated thresholds for a sweep CSV")
    p.add_argument("--sweep-out", help="path of the sweep CSV")

    p = sub.add_parser("report", parents=[common], help="cohort differences and changepoint CSVs")
    p.add_argument("--cpd", action="store_true", help="also write per-period changepoint scores")
    p.add_argument("--checkpoint", help="use this model's detector settings and standardiser")
    return parser


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("MCPD_LOG", "error").lower(), logging.ERROR)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("mcpd")
    root.handlers[:] = [handler]
    root.setLevel(level)


def run(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _apply_overrides(load_run_config(args.config), args)
        COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"mcpd: training error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (SchemaError, OSError, KeyError) as exc:
        print(f"mcpd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
