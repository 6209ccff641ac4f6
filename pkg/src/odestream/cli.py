"""``odestream`` command line: warmup, stream, ablate, baseline, cutout, report.

Settings come from defaults, then an optional ``--config`` file of
``key = value`` lines (keys are the RunConfig field names), then flags.

Exit codes: 0 success, 2 input error, 3 config/checkpoint mismatch,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path

from . import pipeline as pl
from . import report as rp
from .container import file_digest
from .errors import (CheckpointError, ConfigMismatchError, ContractError, DataError, DimensionError,
                     NumericError)
from .model import checkpoint_save
from .pipeline import RunConfig

log = logging.getLogger("odestream")

EXIT_OK, EXIT_INPUT, EXIT_MISMATCH, EXIT_NUMERIC = 0, 2, 3, 4
CHECKPOINT_NAME = "checkpoint.odes"
FINAL_CHECKPOINT_NAME = "final.odes"

_BOOL_FLAGS = {"til_enabled": "til", "kl_enabled": "kl", "l1_enabled": "l1"}
_TRUE, _FALSE = {"1", "true", "yes", "on"}, {"0", "false", "no", "off"}


def _field_types() -> dict[str, type]:
    hints = typing.get_type_hints(RunConfig)
    out = {}
    for f in dataclasses.fields(RunConfig):
        t = hints[f.name]
        args = [a for a in typing.get_args(t) if a is not type(None)]
        out[f.name] = args[0] if args else t
    return out


def _coerce(name: str, text: str, kind: type):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise DataError(f"{name}: expected a boolean, got {text!r}")
    if text.lower() in ("", "none") and name in ("schema", "run_id"):
        return None
    try:
        return kind(text)
    except ValueError as exc:
        raise DataError(f"{name}: cannot parse {text!r} as {kind.__name__}") from exc


def load_config_file(path: str | Path) -> dict:
    types = _field_types()
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise DataError(f"{path}:{lineno}: unknown setting {key!r}")
        out[key] = _coerce(key, value, types[key])
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values = load_config_file(args.config) if getattr(args, "config", None) else {}
    for name in _field_types():
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values).validate()


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    types = _field_types()
    p.add_argument("--config", help="key = value settings file (flags override it)")
    for name, kind in types.items():
        if kind is bool:
            flag = _BOOL_FLAGS.get(name, name.replace("_", "-"))
            p.add_argument(f"--{flag}", dest=name, action=argparse.BooleanOptionalAction, default=None)
        else:
            p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind, default=None)


def _run_dir(cfg: RunConfig, label: str) -> Path:
    run_id = cfg.run_id
    if not run_id:
        run_id = f"{cfg.dataset_name}-{cfg.task}-{label}-h{cfg.horizon}-s{cfg.seed}"
        if cfg.cutout > 0:
            run_id += f"-cut{cfg.cutout:g}"
    out = Path(cfg.out_dir) / run_id
    out.mkdir(parents=True, exist_ok=True)
    return out


def _warmup_into(cfg: RunConfig, prep: pl.Prepared, out: Path):
    log.info("warm-up on %d rows", len(prep.train))
    model, result = pl.warmup(cfg, prep)
    result.write_csv(out / "warmup_log.csv")
    meta = pl.checkpoint_metadata(cfg, prep, result)
    sha = checkpoint_save(model, out / CHECKPOINT_NAME, meta)
    return model, result, sha, meta


def _model_for(cfg: RunConfig, prep: pl.Prepared, out: Path, checkpoint: str | None):
    if checkpoint:
        model, meta = pl.load_compatible(checkpoint, cfg, prep)
        return model, file_digest(checkpoint), meta
    model, _, sha, meta = _warmup_into(cfg, prep, out)
    return model, sha, meta


def _emit_stream(report, out: Path, cfg: RunConfig, prep: pl.Prepared, method: str, sha: str | None,
                 model=None, meta: dict | None = None) -> dict:
    extra = {"dataset": cfg.dataset_name, "task": cfg.task, "method": method}
    if prep.mask_stats is not None:
        extra["mask"] = prep.mask_stats
    if model is not None:
        # same metadata as the starting checkpoint: an unchanged model keeps its hash
        extra["final_checkpoint_sha256"] = checkpoint_save(model, out / FINAL_CHECKPOINT_NAME, meta or {})
    rp.emit_outputs(report, out, checkpoint_sha256=sha, extra=extra)
    summary = rp.load_summary(out)
    print(f"{method}: cumulative MSE {summary['cumulative_mse']:.6f} over {summary['n_scored']} steps -> {out}")
    return summary


# -- subcommands ---------------------------------------------------------------

def cmd_warmup(args) -> int:
    cfg = build_config(args)
    prep = pl.prepare(cfg)
    out = _run_dir(cfg, "warmup")
    _, result, sha, _ = _warmup_into(cfg, prep, out)
    rp.dump_json({"config": cfg.to_dict(), "checkpoint_sha256": sha, "epochs_run": result.epochs_run,
                  "best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss,
                  "best_val_mse": result.best_val_mse}, out / "summary.json")
    print(f"checkpoint {out / CHECKPOINT_NAME} sha256 {sha} ({result.epochs_run} epochs)")
    return EXIT_OK


def cmd_stream(args) -> int:
    cfg = build_config(args)
    prep = pl.prepare(cfg)
    out = _run_dir(cfg, "odestream")
    model, sha, meta = _model_for(cfg, prep, out, args.checkpoint)
    report = pl.stream(model, cfg, prep, "odestream")
    _emit_stream(report, out, cfg, prep, "odestream", sha, model, meta)
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = build_config(args)
    prep = pl.prepare(cfg)
    out = _run_dir(cfg, args.method)
    if args.method == "persistence":
        report = pl.stream(None, cfg, prep, "persistence")
        _emit_stream(report, out, cfg, prep, "persistence", None)
    else:
        model, sha, meta = _model_for(cfg, prep, out, args.checkpoint)
        report = pl.stream(model, cfg, prep, "frozen")
        _emit_stream(report, out, cfg, prep, "frozen", sha, model, meta)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    out = _run_dir(cfg, "ablate")
    table = rp.MetricsTable()
    ds = pl.load_dataset(cfg)
    for name, variant in pl.ablation_configs(cfg).items():
        variant = variant.replace(out_dir=str(out), run_id=name)
        prep = pl.prepare(variant, ds)
        sub = _run_dir(variant, name)
        model, _, sha, meta = _warmup_into(variant, prep, sub)
        report = pl.stream(model, variant, prep, "odestream")
        summary = _emit_stream(report, sub, variant, prep, name, sha, model, meta)
        table.add(cfg.dataset_name, cfg.task, name, cfg.horizon, summary["cumulative_mse"])
    table.write_csv(out / "metrics.csv")
    table.write_json(out / "metrics.json")
    print(table.format())
    return EXIT_OK


def cmd_cutout(args) -> int:
    cfg = build_config(args)
    if cfg.cutout <= 0:
        raise DataError("cutout preview needs --cutout > 0")
    prep = pl.prepare(cfg)
    out = _run_dir(cfg, "cutout")
    rp.dump_json({"config": cfg.to_dict(), "mask": prep.mask_stats}, out / "mask.json")
    print(json.dumps(prep.mask_stats, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    if not (run / "summary.json").exists():
        raise DataError(f"{run} is not a run directory (no summary.json)")
    summary = rp.load_summary(run)
    if (run / "trace.csv").exists():
        report = rp.load_report(run)
        (run / "predictions.svg").write_text(rp.predictions_svg(report))
        (run / "loss.svg").write_text(rp.loss_svg(report))
    if (run / "metrics.json").exists():
        print(rp.MetricsTable.read_json(run / "metrics.json").format())
    print(json.dumps({k: summary.get(k) for k in ("method", "dataset", "task", "n_steps", "cumulative_mse")},
                     sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odestream", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("warmup", help="split, scale and warm up; save a checkpoint")
    _add_run_flags(p)
    p.set_defaults(func=cmd_warmup)

    p = sub.add_parser("stream", help="online prequential run (warms up first unless --checkpoint)")
    _add_run_flags(p)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("baseline", help="persistence or frozen warm-started reference run")
    _add_run_flags(p)
    p.add_argument("--method", choices=("persistence", "frozen"), default="persistence")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("ablate", help="TIL / loss-term ablation table")
    _add_run_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("cutout", help="preview the observation mask of a cutout run")
    _add_run_flags(p)
    p.set_defaults(func=cmd_cutout)

    p = sub.add_parser("report", help="re-render plots and print a run's summary")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ContractError, DimensionError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
