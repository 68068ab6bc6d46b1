"""Command-line workflow: build-vocab, pretrain-teacher, distill,
select-checkpoint, bench, analyze.

Every command writes a run manifest (resolved config, input digests, tool
version, timestamps) into its output directory before doing work and
finalizes it on exit. All randomness flows from explicit --seed flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import fields as dataclass_fields
from pathlib import Path

from . import __version__, analysis, bench, textdata, trainer
from .distill import RelationConfig
from .encoder import ModelConfig, load_checkpoint
from .errors import ConfigError, DistillkitError
from .trainer import TrainConfig

log = logging.getLogger(__name__)


# -- key=value config files -----------------------------------------------------


def parse_kv_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{raw.strip()}'")
            key, val = line.split("=", 1)
            key = key.strip()
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key '{key}'")
            out[key] = val.strip()
    return out


def _coerce(raw: str, ftype):
    if ftype is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: '{raw}'")
    return ftype(raw)


def _config_from_file(path, cls, overrides: dict | None = None):
    """Build a config dataclass from a key=value file with exhaustive key checks."""
    spec = {f.name: f.type for f in dataclass_fields(cls)}
    type_map = {"int": int, "float": float, "str": str, "bool": bool}
    kv = parse_kv_file(path)
    kwargs: dict = {}
    for key, raw in kv.items():
        if key not in spec:
            raise ConfigError(
                f"{path}: unknown key '{key}' for {cls.__name__}; valid keys: {sorted(spec)}"
            )
        ftype = spec[key]
        if isinstance(ftype, str):
            ftype = type_map.get(ftype, str)
        try:
            kwargs[key] = _coerce(raw, ftype)
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for '{key}': {exc}") from exc
    if overrides:
        kwargs.update(overrides)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# -- run manifests -----------------------------------------------------------------


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, out_dir, command: str, config: dict, inputs: list):
        self.path = Path(out_dir) / "manifest.json"
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        self.doc = {
            "command": command,
            "config": config,
            "inputs": {str(p): _sha256(p) for p in inputs if p and Path(p).is_file()},
            "tool_version": __version__,
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "finished_at": None,
            "status": "running",
        }
        self._write()

    def _write(self):
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(self.doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def finish(self, status: str):
        self.doc["status"] = status
        self.doc["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self._write()


# -- subcommands ---------------------------------------------------------------------


def cmd_build_vocab(args) -> int:
    manifest = Manifest(
        Path(args.out).parent,
        "build-vocab",
        {"corpus": args.corpus, "out": args.out, "size": args.size, "lowercase": args.lowercase},
        [args.corpus],
    )
    try:
        vocab = textdata.build_vocab(args.corpus, args.size, args.lowercase)
        vocab.save(args.out)
    except Exception:
        manifest.finish("failed")
        raise
    manifest.finish("ok")
    print(f"wrote vocab of {len(vocab)} tokens to {args.out}")
    return 0


def cmd_pretrain_teacher(args) -> int:
    if args.steps < 1:
        raise ConfigError(f"--steps must be >= 1, got {args.steps}")
    vocab = textdata.Vocab.load(args.vocab, lowercase=args.lowercase)
    model_cfg = _config_from_file(args.config, ModelConfig, {"vocab_size": len(vocab)})
    warmup = args.warmup if args.warmup is not None else max(1, args.steps // 10)
    train_cfg = TrainConfig(
        total_steps=args.steps,
        lr_peak=args.lr,
        warmup_steps=warmup,
        batch_size=args.batch_size,
        seq_len=args.seq_len,
        checkpoint_every=args.checkpoint_every or args.steps,
        seed=args.seed,
        beta2=0.999,
    )
    manifest = Manifest(
        args.out,
        "pretrain-teacher",
        {
            "model_config": model_cfg.to_dict(),
            "train_config": train_cfg.to_dict(),
            "mask_prob": args.mask_prob,
            "corpus": args.corpus,
            "vocab": args.vocab,
        },
        [args.config, args.corpus, args.vocab],
    )
    try:
        stream = textdata.batch_stream(
            args.corpus, vocab, train_cfg.batch_size, train_cfg.seq_len, train_cfg.seed
        )
        records = trainer.mlm_run(
            model_cfg,
            stream,
            train_cfg,
            args.out,
            mask_prob=args.mask_prob,
            run_info={"corpus": str(args.corpus), "vocab": str(args.vocab)},
        )
    except Exception:
        manifest.finish("failed")
        raise
    manifest.finish("ok")
    print(f"pretrained teacher: {len(records)} checkpoints in {args.out}")
    print(f"final checkpoint: {records[-1].path} (loss {records[-1].train_loss:.5f})")
    return 0


def cmd_distill(args) -> int:
    vocab = textdata.Vocab.load(args.vocab, lowercase=args.lowercase)
    student_cfg = _config_from_file(args.student_config, ModelConfig, {"vocab_size": len(vocab)})
    rel_cfg = _config_from_file(args.relation_config, RelationConfig)
    train_cfg = _config_from_file(args.train_config, TrainConfig)
    manifest = Manifest(
        args.out,
        "distill",
        {
            "teacher": args.teacher,
            "student_config": student_cfg.to_dict(),
            "relation_config": rel_cfg.to_dict(),
            "train_config": train_cfg.to_dict(),
            "corpus": args.corpus,
            "vocab": args.vocab,
        },
        [args.teacher, args.student_config, args.relation_config, args.train_config, args.corpus, args.vocab],
    )
    try:
        stream = textdata.batch_stream(
            args.corpus, vocab, train_cfg.batch_size, train_cfg.seq_len, train_cfg.seed
        )
        records = trainer.distill_run(
            args.teacher,
            student_cfg,
            rel_cfg,
            stream,
            train_cfg,
            args.out,
            run_info={"corpus": str(args.corpus), "vocab": str(args.vocab)},
        )
    except Exception:
        manifest.finish("failed")
        raise
    manifest.finish("ok")
    print(f"distilled student: {len(records)} checkpoints in {args.out}")
    return 0


def cmd_select_checkpoint(args) -> int:
    run_dir = Path(args.run_dir)
    run_json = run_dir / "run.json"
    if not run_json.is_file():
        raise ConfigError(f"{run_dir} has no run.json; is it a distill run directory?")
    with open(run_json, "r", encoding="utf-8") as fh:
        run_info = json.load(fh)
    ckpts = sorted(run_dir.glob("ckpt-*.ckpt"))
    if not ckpts:
        raise ConfigError(f"{run_dir} contains no checkpoints")

    train_corpus = run_info.get("corpus")
    if train_corpus and Path(train_corpus).resolve() == Path(args.validation_corpus).resolve():
        print(
            "warning: validation corpus equals the training corpus; "
            "checkpoint selection will not measure generalization",
            file=sys.stderr,
        )

    rel_cfg = RelationConfig(**run_info["relation_config"])
    train_cfg = TrainConfig(**run_info["train_config"])
    vocab_path = args.vocab or run_info.get("vocab")
    if not vocab_path:
        raise ConfigError("no --vocab given and run.json records none")
    vocab = textdata.Vocab.load(vocab_path, lowercase=args.lowercase)

    out_dir = Path(args.out)
    manifest = Manifest(
        out_dir,
        "select-checkpoint",
        {
            "run_dir": str(run_dir),
            "validation_corpus": args.validation_corpus,
            "teacher": args.teacher,
        },
        [args.validation_corpus, args.teacher],
    )
    try:
        records = []
        for p in ckpts:
            _, _, step = load_checkpoint(p)
            records.append(trainer.CheckpointRecord(path=str(p), step=step, train_loss=float("nan")))
        best = trainer.select_checkpoint(
            records, args.teacher, rel_cfg, args.validation_corpus, vocab, train_cfg
        )
        with open(out_dir / "best.json", "w", encoding="utf-8") as fh:
            json.dump(
                {"path": best.path, "step": best.step, "val_loss": best.val_loss},
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
    except Exception:
        manifest.finish("failed")
        raise
    manifest.finish("ok")
    print(f"best checkpoint: {best.path} (step {best.step}, val loss {best.val_loss:.6f})")
    return 0


def cmd_bench(args) -> int:
    vocab = textdata.Vocab.load(args.vocab, lowercase=args.lowercase)
    weights, model_cfg, _ = load_checkpoint(args.model)
    sweep_sizes = tuple(int(s) for s in args.sweep.split(","))
    cfg = bench.BenchConfig(
        warmup_batches=args.warmup_batches,
        measured_batches=args.measured_batches,
        sweep_sizes=sweep_sizes,
        seq_len=min(args.seq_len, model_cfg.max_seq_len),
    )
    sampler = bench.make_sampler(args.power_backend)
    out_dir = Path(args.out)
    manifest = Manifest(
        out_dir,
        "bench",
        {
            "model": args.model,
            "corpus": args.corpus,
            "sweep": list(sweep_sizes),
            "power_backend": args.power_backend,
            "seq_len": cfg.seq_len,
            "warmup_batches": cfg.warmup_batches,
            "measured_batches": cfg.measured_batches,
            "seed": args.seed,
        },
        [args.model, args.corpus, args.vocab],
    )
    try:
        data = bench.BenchData(args.corpus, vocab, cfg.seq_len, seed=args.seed)
        runner = bench.EncoderRunner(Path(args.model).stem, weights)
        report = bench.sweep(runner, data, cfg, sampler)
        bench.write_report_json(report, out_dir / "report.json")
        bench.write_report_csv(report, out_dir / "report.csv")
    except Exception:
        manifest.finish("failed")
        raise
    manifest.finish("ok")
    print(
        f"latency bs1 {report.latency_bs1_ms:.3f} ms | peak throughput "
        f"{report.peak_throughput_sps:.1f} samples/s @ bs {report.peak_throughput_batch_size} | "
        f"optimal {report.optimal_j_per_sample:.6f} J/sample @ bs {report.optimal_j_batch_size}"
    )
    return 0


def cmd_analyze(args) -> int:
    out_dir = Path(args.out)
    manifest = Manifest(
        out_dir,
        "analyze",
        {"scores": args.scores, "efficiency": args.efficiency, "baseline": args.baseline},
        [args.scores, args.efficiency],
    )
    try:
        scores = analysis.load_scores_csv(args.scores)
        efficiency = analysis.load_efficiency_csv(args.efficiency)
        if args.baseline not in efficiency:
            raise ConfigError(
                f"baseline '{args.baseline}' absent from {args.efficiency}; "
                f"models: {sorted(efficiency)}"
            )
        records = analysis.build_records(scores, efficiency)
        rows = analysis.summary_table(records, args.baseline)
        analysis.write_summary_csv(rows, out_dir / "summary.csv")
        figures = analysis.emit_figures(records, out_dir)
    except Exception:
        manifest.finish("failed")
        raise
    manifest.finish("ok")
    print(analysis.format_summary(rows))
    print(f"wrote summary.csv and {len(figures)} figure files to {out_dir}")
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distillkit",
        description="Relation-transfer distillation for small encoders, plus an "
        "efficiency benchmark and analysis pipeline.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a word-level vocabulary from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=8192)
    p.add_argument("--lowercase", action="store_true")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("pretrain-teacher", help="MLM-pretrain a toy teacher")
    p.add_argument("--config", required=True, help="model config key=value file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--lr", type=float, default=5.5e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seq-len", type=int, default=64)
    p.add_argument("--mask-prob", type=float, default=0.15)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lowercase", action="store_true")
    p.set_defaults(func=cmd_pretrain_teacher)

    p = sub.add_parser("distill", help="distill a student from a frozen teacher")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student-config", required=True)
    p.add_argument("--relation-config", required=True)
    p.add_argument("--train-config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lowercase", action="store_true")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("select-checkpoint", help="pick the checkpoint minimizing validation loss")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--validation-corpus", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--lowercase", action="store_true")
    p.set_defaults(func=cmd_select_checkpoint)

    p = sub.add_parser("bench", help="measure latency, throughput, and energy")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--sweep", default="1,2,4,8,16,32,64,128,256")
    p.add_argument("--power-backend", default="constant:100")
    p.add_argument("--out", required=True)
    p.add_argument("--warmup-batches", type=int, default=10)
    p.add_argument("--measured-batches", type=int, default=100)
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lowercase", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="summaries, improvement factors, frontiers, figure data")
    p.add_argument("--scores", required=True)
    p.add_argument("--efficiency", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DistillkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
