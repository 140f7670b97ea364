"""Command-line driver: ``sparsevlm <command> ...``.

Exit codes: 0 ok, 2 usage or config error, 3 data or checkpoint error,
4 invariant violation. Every command is deterministic for a fixed config.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import read_checkpoint, save_checkpoint, verify
from .config import RunConfig, load_config
from .data import Dataset, generate, load_dataset, save_dataset, split
from .errors import ConfigError, FormatError, InputError, SparseVlmError
from .lora import attach_adapters, merge, train
from .model import PRUNABLE, AdapterMode, Modality, ToyVlm, WeightMode, accuracy, forward
from .planner import AllocationPlan, enumerate_allocations, run_sweep
from .pretrain import pretrained_model
from .pruning import ScoringMetric, measured_sparsity, prune

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4


class UsageError(SparseVlmError):
    pass


class DataError(SparseVlmError):
    pass


class InvariantError(SparseVlmError):
    pass


def _out_path(path: str, force: bool) -> Path:
    p = Path(path)
    if p.exists() and not force:
        raise UsageError(f"{p} exists; pass --force to overwrite")
    if not p.parent.is_dir():
        raise UsageError(f"directory {p.parent} does not exist")
    return p


def _write(path: Path, data: bytes | str) -> None:
    try:
        if isinstance(data, str):
            path.write_text(data, encoding="utf-8")
        else:
            path.write_bytes(data)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None


def _load_data(path: str, cfg: RunConfig | None = None) -> Dataset:
    try:
        data = load_dataset(path)
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc.strerror}") from None
    except FormatError as exc:
        raise DataError(str(exc)) from None
    if cfg is not None and (data.vision.shape[1], data.text.shape[1], data.classes) != (cfg.d_v, cfg.d_t, cfg.classes):
        raise DataError(f"{path}: dataset shape does not match config d_v/d_t/classes")
    return data


def _load_model(path: str) -> ToyVlm:
    try:
        return read_checkpoint(path).model()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    except FormatError as exc:
        raise DataError(str(exc)) from None


def _splits(data: Dataset, cfg: RunConfig):
    try:
        return split(data, cfg.calib_count, cfg.eval_count)
    except InputError as exc:
        raise DataError(str(exc)) from None


def sparsity_report(model: ToyVlm) -> dict[str, float]:
    out = {m.value: measured_sparsity(model, {m}) for m in (Modality.VISION, Modality.LANGUAGE)}
    out["overall"] = measured_sparsity(model, PRUNABLE)
    return out


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_gen_data(cfg: RunConfig, out_path: str, force: bool = False) -> Dataset:
    path = _out_path(out_path, force)
    data = generate(cfg.task_spec(), cfg.count, cfg.seed)
    try:
        save_dataset(data, path)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None
    return data


def cmd_pretrain(cfg: RunConfig, data_path: str, ckpt_out: str, force: bool = False) -> ToyVlm:
    path = _out_path(ckpt_out, force)
    train_set, _, _ = _splits(_load_data(data_path, cfg), cfg)
    model = pretrained_model(train_set, cfg.seed, cfg.model_dims(), cfg.pretrain_config())
    save_checkpoint(model, path, {"stage": "pretrained"})
    return model


def cmd_prune(cfg: RunConfig, ckpt_in: str, ckpt_out: str, calib_path: str | None = None, force: bool = False) -> dict:
    path = _out_path(ckpt_out, force)
    metric = cfg.metric()
    if metric is not ScoringMetric.MAGNITUDE and calib_path is None:
        raise UsageError(f"method={metric.value} needs --calib")
    model = _load_model(ckpt_in)
    calib = None
    if calib_path is not None:
        _, calib, _ = _splits(_load_data(calib_path), cfg)
    try:
        prune(model, metric, cfg.modality_specs(), calib)
    except InputError as exc:
        raise UsageError(str(exc)) from None
    save_checkpoint(model, path, {"stage": "pruned", "method": metric.value})
    return sparsity_report(model)


def cmd_plan(cfg: RunConfig, data_path: str, out_csv: str, force: bool = False):
    path = _out_path(out_csv, force)
    train_set, calib, evals = _splits(_load_data(data_path, cfg), cfg)
    plans = enumerate_allocations(cfg.budget, cfg.step)
    if cfg.include_baseline:
        plans.insert(0, AllocationPlan(0.0, 0.0))
    factory = lambda seed: pretrained_model(train_set, seed, cfg.model_dims(), cfg.pretrain_config())
    result = run_sweep(factory, plans, cfg.metric(), calib, evals, cfg.plan_seeds(), cfg.group_enum())
    result.write_csv(path)
    return result


def cmd_finetune(cfg: RunConfig, ckpt_in: str, data_path: str, ckpt_out: str, report_csv: str | None = None, force: bool = False) -> dict:
    path = _out_path(ckpt_out, force)
    csv_path = _out_path(report_csv, force) if report_csv else None
    model = _load_model(ckpt_in)
    train_set, _, _ = _splits(_load_data(data_path, cfg), cfg)
    if cfg.train_count >= 0:
        train_set = train_set[: cfg.train_count]
    tcfg = cfg.train_config()
    before = sparsity_report(model)
    attach_adapters(model, tcfg)
    report = train(model, train_set, tcfg)
    merge(model)
    after = sparsity_report(model)
    save_checkpoint(model, path, {"stage": "finetuned", "mode": tcfg.mode.value})
    if csv_path is not None:
        report.write_csv(csv_path)
    preserved = before == after
    summary = {"before": before, "after": after, "sparsity_preserved": preserved, "mode": tcfg.mode.value, "steps": len(report.losses)}
    if tcfg.mode is AdapterMode.SPARSE and not preserved:
        raise InvariantError("sparse finetune changed measured sparsity: " + _json(summary))
    return summary


def cmd_eval(cfg: RunConfig, ckpt: str, data_path: str) -> dict:
    model = _load_model(ckpt)
    _, _, evals = _splits(_load_data(data_path), cfg)
    if evals.vision.shape[1] != model.dims.d_v or evals.text.shape[1] != model.dims.d_t:
        raise DataError("dataset does not match checkpoint input dims")
    logits, _ = forward(model, evals.vision, evals.text, WeightMode.MASKED_STUDENT)
    return {
        "accuracy": accuracy(model, evals),
        "count": len(evals),
        "sparsity": sparsity_report(model),
        "logit_sha256": hashlib.sha256(np.ascontiguousarray(logits, "<f8").tobytes()).hexdigest(),
    }


def cmd_verify(ckpt: str) -> list[str]:
    try:
        checkpoint = read_checkpoint(ckpt)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {ckpt}: {exc.strerror}") from None
    except FormatError as exc:
        raise DataError(str(exc)) from None
    report = verify(checkpoint)
    lines = report.lines()
    if not report.passed:
        raise InvariantError("\n".join(lines))
    return lines


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")

    parser = argparse.ArgumentParser(prog="sparsevlm", description="Toy two-modality pruning and sparse adapter restoration.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic SVLD1 dataset")
    p.add_argument("out")
    p = sub.add_parser("pretrain", parents=[common], help="train the dense teacher")
    p.add_argument("data")
    p.add_argument("out")
    p = sub.add_parser("prune", parents=[common], help="score and mask a checkpoint")
    p.add_argument("ckpt_in")
    p.add_argument("ckpt_out")
    p.add_argument("--calib", help="dataset whose calibration split feeds gradient/wanda scores")
    p.add_argument("--method", choices=[m.value for m in ScoringMetric])
    p.add_argument("--report", help="also write the sparsity report here")
    p = sub.add_parser("plan", parents=[common], help="sweep vision/language sparsity allocations")
    p.add_argument("data")
    p.add_argument("out_csv")
    p = sub.add_parser("finetune", parents=[common], help="restore a pruned checkpoint with adapters")
    p.add_argument("ckpt_in")
    p.add_argument("data")
    p.add_argument("ckpt_out")
    p.add_argument("--report", help="per-step training CSV")
    p.add_argument("--lam", type=float, help="task-loss weight, overrides config")
    p.add_argument("--mode", choices=[m.value for m in AdapterMode], help="adapter mode, overrides config")
    p = sub.add_parser("eval", parents=[common], help="accuracy, sparsity and logit checksum as JSON")
    p.add_argument("ckpt")
    p.add_argument("data")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p = sub.add_parser("verify", parents=[common], help="check checkpoint invariants")
    p.add_argument("ckpt")
    return parser


def _run(args) -> str:
    overrides = list(args.set)
    for flag in ("method", "lam", "mode"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{flag}={value}")
    cfg = load_config(args.config, overrides)
    cmd = args.command
    if cmd == "gen-data":
        data = cmd_gen_data(cfg, args.out, args.force)
        return f"wrote {len(data)} samples to {args.out}\n"
    if cmd == "pretrain":
        model = cmd_pretrain(cfg, args.data, args.out, args.force)
        return f"wrote dense checkpoint (seed {model.seed}) to {args.out}\n"
    if cmd == "prune":
        text = _json(cmd_prune(cfg, args.ckpt_in, args.ckpt_out, args.calib, args.force))
        if args.report:
            _write(_out_path(args.report, args.force), text)
        return text
    if cmd == "plan":
        result = cmd_plan(cfg, args.data, args.out_csv, args.force)
        best = result.best()
        return f"wrote {len(result.rows())} rows to {args.out_csv}; best s_v={best.plan.s_v} s_l={best.plan.s_l} mean={best.mean!r}\n"
    if cmd == "finetune":
        return _json(cmd_finetune(cfg, args.ckpt_in, args.data, args.ckpt_out, args.report, args.force))
    if cmd == "eval":
        text = _json(cmd_eval(cfg, args.ckpt, args.data))
        if args.out:
            _write(_out_path(args.out, args.force), text)
            return ""
        return text
    if cmd == "verify":
        return "\n".join(cmd_verify(args.ckpt)) + "\n"
    raise UsageError(f"unknown command {cmd}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        sys.stdout.write(_run(args))
    except (UsageError, ConfigError, InputError) as exc:
        print(f"sparsevlm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError) as exc:
        print(f"sparsevlm: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"sparsevlm: invariant violated:\n{exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
