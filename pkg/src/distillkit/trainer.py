"""Optimization loop: AdamW, linear warmup/decay, checkpoint cadence,
and external-validation checkpoint selection."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from . import numkit as nk
from .distill import RelationConfig, distill_loss
from .encoder import (
    EncoderWeights,
    ModelConfig,
    forward,
    init_model,
    is_no_decay,
    load_checkpoint,
    mlm_loss,
    save_checkpoint,
)
from .errors import ConfigError, NumericsError, SkipBatch, TrainingDiverged
from .textdata import TokenBatch, Vocab, fixed_batches

log = logging.getLogger(__name__)

GRAD_CLIP_NORM = 1.0
LOSS_LOG_HEADER = "step,lr,loss_total,loss_qq,loss_kk,loss_vv"


@dataclass
class TrainConfig:
    """Optimizer and schedule hyperparameters (scaled-down defaults are the
    caller's business; the named defaults are the production regime)."""

    total_steps: int
    lr_peak: float = 5.5e-4
    warmup_steps: int = 4000
    beta1: float = 0.9
    beta2: float = 0.98  # 0.999 for GeGLU/relative-position teacher families
    eps: float = 1e-6
    weight_decay: float = 0.01
    batch_size: int = 256
    seq_len: int = 128
    checkpoint_every: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 < self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"warmup_steps must satisfy 0 < warmup < total, got "
                f"{self.warmup_steps} vs {self.total_steps}"
            )
        if self.lr_peak <= 0:
            raise ConfigError(f"lr_peak must be > 0, got {self.lr_peak}")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 < b < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {b}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.seq_len < 3:
            raise ConfigError("seq_len must be >= 3")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CheckpointRecord:
    path: str
    step: int
    train_loss: float
    val_loss: Optional[float] = None


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to lr_peak at warmup_steps, then linear decay to 0."""
    if not 0 <= step <= cfg.total_steps:
        raise ConfigError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.lr_peak * step / cfg.warmup_steps
    return cfg.lr_peak * (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: dict[str, nk.Tensor]):
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.step = 0


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all grads in place so their global L2 norm is <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def adamw_step(
    params: dict[str, nk.Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
    lr: float,
) -> None:
    """Bias-corrected Adam with decoupled weight decay.

    Decay skips biases and layer-norm parameters. A non-finite gradient
    aborts before any parameter is touched.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ConfigError(f"grad shape {g.shape} != param shape {p.shape} for '{name}'")
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for '{name}'; step aborted")
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        update = m_hat / (np.sqrt(v_hat) + cfg.eps)
        if cfg.weight_decay and not is_no_decay(name):
            update = update + cfg.weight_decay * p.data
        p.data -= (lr * update).astype(p.data.dtype)


def _write_run_json(out_dir: Path, payload: dict) -> None:
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def distill_run(
    teacher_ckpt,
    student_cfg: ModelConfig,
    rel_cfg: RelationConfig,
    data: Iterator[TokenBatch],
    cfg: TrainConfig,
    out_dir,
    run_info: Optional[dict] = None,
) -> list[CheckpointRecord]:
    """Train a student against a frozen teacher; checkpoint on cadence.

    Per step: teacher forward (frozen, capture layer M), student forward
    (capture its last layer), relation loss, backward, global-norm clip at
    1.0, AdamW with the scheduled lr. Update ``t`` uses ``lr_at(t - 1)`` so
    the peak rate applies right after warmup. A non-finite loss aborts the
    run with the last saved checkpoint left on disk.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    teacher, teacher_cfg, _ = load_checkpoint(teacher_ckpt)
    if teacher_cfg.hidden % rel_cfg.relation_heads != 0:
        raise ConfigError(
            f"relation_heads {rel_cfg.relation_heads} does not divide teacher hidden "
            f"{teacher_cfg.hidden}"
        )
    if student_cfg.hidden % rel_cfg.relation_heads != 0:
        raise ConfigError(
            f"relation_heads {rel_cfg.relation_heads} does not divide student hidden "
            f"{student_cfg.hidden}"
        )
    if rel_cfg.teacher_layer > teacher_cfg.n_layers:
        raise ConfigError(
            f"teacher_layer {rel_cfg.teacher_layer} exceeds teacher depth {teacher_cfg.n_layers}"
        )

    student = init_model(student_cfg, cfg.seed)
    params = student.parameters()
    state = AdamState(params)
    dropout_rng = np.random.default_rng(cfg.seed + 1)

    _write_run_json(
        out_dir,
        {
            "kind": "distill",
            "teacher_checkpoint": str(teacher_ckpt),
            "student_config": student_cfg.to_dict(),
            "relation_config": rel_cfg.to_dict(),
            "train_config": cfg.to_dict(),
            **(run_info or {}),
        },
    )

    records: list[CheckpointRecord] = []
    log_path = out_dir / "loss_log.csv"
    with open(log_path, "w", encoding="utf-8") as log_fh:
        log_fh.write(LOSS_LOG_HEADER + "\n")
        for step in range(1, cfg.total_steps + 1):
            batch = next(data)
            lr = lr_at(step - 1, cfg)
            try:
                _, t_cap = forward(teacher, batch, capture_layer=rel_cfg.teacher_layer)
                _, s_cap = forward(
                    student,
                    batch,
                    capture_layer=student_cfg.n_layers,
                    train_mode=True,
                    rng=dropout_rng,
                )
                loss, parts = distill_loss(t_cap, s_cap, rel_cfg, batch.attention_mask)
                loss_val = float(loss.data)
                if not np.isfinite(loss_val):
                    raise NumericsError(f"non-finite loss at step {step}")
                nk.zero_grads(params.values())
                loss.backward()
            except NumericsError as exc:
                raise TrainingDiverged(
                    f"aborting at step {step}: {exc}; last checkpoint retained"
                ) from exc
            grads = {n: p.grad for n, p in params.items() if p.grad is not None}
            clip_grad_norm(grads, GRAD_CLIP_NORM)
            adamw_step(params, grads, state, cfg, lr)
            log_fh.write(
                f"{step},{lr:.10g},{loss_val:.10g},"
                f"{parts['qq']:.10g},{parts['kk']:.10g},{parts['vv']:.10g}\n"
            )
            if step % cfg.checkpoint_every == 0 or step == cfg.total_steps:
                path = out_dir / f"ckpt-{step:07d}.ckpt"
                save_checkpoint(student, student_cfg, step, path)
                records.append(CheckpointRecord(path=str(path), step=step, train_loss=loss_val))
                log.info("step %d: loss %.5f, checkpoint %s", step, loss_val, path)
    return records


def mlm_run(
    model_cfg: ModelConfig,
    data: Iterator[TokenBatch],
    cfg: TrainConfig,
    out_dir,
    mask_prob: float = 0.15,
    run_info: Optional[dict] = None,
) -> list[CheckpointRecord]:
    """Masked-language-model pretraining for toy teachers."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    weights = init_model(model_cfg, cfg.seed)
    params = weights.parameters()
    state = AdamState(params)
    rng = np.random.default_rng(cfg.seed + 1)

    _write_run_json(
        out_dir,
        {
            "kind": "mlm_pretrain",
            "model_config": model_cfg.to_dict(),
            "train_config": cfg.to_dict(),
            "mask_prob": mask_prob,
            **(run_info or {}),
        },
    )

    records: list[CheckpointRecord] = []
    with open(out_dir / "loss_log.csv", "w", encoding="utf-8") as log_fh:
        log_fh.write("step,lr,loss\n")
        for step in range(1, cfg.total_steps + 1):
            lr = lr_at(step - 1, cfg)
            for _ in range(100):
                batch = next(data)
                try:
                    loss = mlm_loss(weights, batch, mask_prob, rng)
                except SkipBatch:
                    continue
                break
            else:
                raise TrainingDiverged("100 consecutive batches had no maskable position")
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingDiverged(f"non-finite MLM loss at step {step}")
            nk.zero_grads(params.values())
            loss.backward()
            grads = {n: p.grad for n, p in params.items() if p.grad is not None}
            clip_grad_norm(grads, GRAD_CLIP_NORM)
            adamw_step(params, grads, state, cfg, lr)
            log_fh.write(f"{step},{lr:.10g},{loss_val:.10g}\n")
            if step % cfg.checkpoint_every == 0 or step == cfg.total_steps:
                path = out_dir / f"ckpt-{step:07d}.ckpt"
                save_checkpoint(weights, model_cfg, step, path)
                records.append(CheckpointRecord(path=str(path), step=step, train_loss=loss_val))
    return records


def evaluate_distill_loss(
    student: EncoderWeights,
    teacher: EncoderWeights,
    rel_cfg: RelationConfig,
    batches: list[TokenBatch],
) -> float:
    """Row-weighted mean relation loss over fixed batches, dropout off."""
    total = 0.0
    weight = 0.0
    for batch in batches:
        _, t_cap = forward(teacher, batch, capture_layer=rel_cfg.teacher_layer)
        _, s_cap = forward(student, batch, capture_layer=student.config.n_layers)
        loss, _ = distill_loss(t_cap, s_cap, rel_cfg, batch.attention_mask)
        rows = float(batch.attention_mask.sum())
        total += float(loss.data) * rows
        weight += rows
    return total / weight


def select_checkpoint(
    records: list[CheckpointRecord],
    teacher_ckpt,
    rel_cfg: RelationConfig,
    validation_corpus,
    vocab: Vocab,
    cfg: TrainConfig,
    evaluator: Optional[Callable[[CheckpointRecord], float]] = None,
) -> CheckpointRecord:
    """Pick the record minimizing validation loss; ties go to the later step.

    ``evaluator`` exists for tests that stipulate losses; the default loads
    each checkpoint and measures the relation loss on the full validation
    stream with fixed batching.
    """
    if not records:
        raise ConfigError("select_checkpoint needs at least one record")
    if evaluator is None:
        teacher, _, _ = load_checkpoint(teacher_ckpt)
        batches = fixed_batches(validation_corpus, vocab, cfg.batch_size, cfg.seq_len)

        def evaluator(rec: CheckpointRecord) -> float:
            student, _, _ = load_checkpoint(rec.path)
            return evaluate_distill_loss(student, teacher, rel_cfg, batches)

    scored = []
    for rec in records:
        val = float(evaluator(rec))
        scored.append(
            CheckpointRecord(path=rec.path, step=rec.step, train_loss=rec.train_loss, val_loss=val)
        )
    return min(scored, key=lambda r: (r.val_loss, -r.step))
