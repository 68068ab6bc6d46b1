"""Multi-head self-attention relation transfer.

Captured Q/K/V vectors are re-split into ``relation_heads`` equal-width
chunks, which decouples the relation geometry from either model's attention
head count. For each of the Q-Q, K-K and V-V pairs the scaled dot-product
relation matrix is softmax-normalized over valid key positions and the
student is trained to minimize KL(teacher || student), averaged over valid
query rows, relation heads, and batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .encoder import AttentionCapture
from .errors import ConfigError, DegenerateRowError, ShapeError


@dataclass
class RelationConfig:
    """Which teacher layer to transfer from, and how to weight the pairs."""

    teacher_layer: int
    relation_heads: int
    w_qq: float = 1.0 / 3.0
    w_kk: float = 1.0 / 3.0
    w_vv: float = 1.0 / 3.0

    def __post_init__(self):
        if self.teacher_layer < 1:
            raise ConfigError(f"teacher_layer must be >= 1, got {self.teacher_layer}")
        if self.relation_heads < 1:
            raise ConfigError(f"relation_heads must be >= 1, got {self.relation_heads}")
        weights = (self.w_qq, self.w_kk, self.w_vv)
        if any(w < 0 for w in weights):
            raise ConfigError(f"pair weights must be >= 0, got {weights}")
        if not any(w > 0 for w in weights):
            raise ConfigError("at least one pair weight must be positive")

    def pair_weights(self) -> dict[str, float]:
        return {"qq": self.w_qq, "kk": self.w_kk, "vv": self.w_vv}

    def to_dict(self) -> dict:
        return {
            "teacher_layer": self.teacher_layer,
            "relation_heads": self.relation_heads,
            "w_qq": self.w_qq,
            "w_kk": self.w_kk,
            "w_vv": self.w_vv,
        }


def to_relation_heads(x: nk.Tensor, relation_heads: int) -> nk.Tensor:
    """[batch, seq, H] -> [batch, relation_heads, seq, H / relation_heads].

    The width-H token vector is split contiguously; tokens are never permuted.
    """
    x = nk.as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"expected [batch, seq, hidden], got shape {x.shape}")
    b, s, h = x.shape
    if h % relation_heads != 0:
        raise ShapeError(
            f"hidden width {h} not divisible by relation_heads {relation_heads}"
        )
    d = h // relation_heads
    return nk.transpose(nk.reshape(x, (b, s, relation_heads, d)), (0, 2, 1, 3))


def relation_logits(xh: nk.Tensor) -> nk.Tensor:
    """Per-head scaled self dot-products: Xh @ Xh^T / sqrt(d_r)."""
    xh = nk.as_tensor(xh)
    if xh.ndim != 4:
        raise ShapeError(f"expected [batch, heads, seq, d_r], got shape {xh.shape}")
    d = xh.shape[-1]
    return nk.matmul(xh, nk.transpose(xh, (0, 1, 3, 2))) * (1.0 / np.sqrt(d))


def _teacher_log_probs(logits: np.ndarray, key_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Masked softmax probabilities and log-probabilities, plain numpy."""
    neg = np.where(key_mask, logits, -np.inf)
    z = logits - neg.max(axis=-1, keepdims=True)
    e = np.exp(np.where(key_mask, z, -np.inf))
    s = e.sum(axis=-1, keepdims=True)
    p = e / s
    logp = z - np.log(s)
    return p, logp


def relation_kl(teacher_logits, student_logits: nk.Tensor, mask: np.ndarray) -> nk.Tensor:
    """Mean KL(teacher || student) over valid (batch, head, query-row) triples.

    ``mask`` is the [batch, seq] validity mask; it restricts both the softmax
    support (keys) and which query rows count. Gradients flow only into the
    student logits; the teacher side is treated as a constant.
    """
    t = teacher_logits.data if isinstance(teacher_logits, nk.Tensor) else np.asarray(teacher_logits)
    s_shape = student_logits.shape
    if t.shape != s_shape:
        raise ShapeError(f"relation shapes differ: teacher {t.shape} vs student {s_shape}")
    if t.ndim != 4 or t.shape[-1] != t.shape[-2]:
        raise ShapeError(f"expected [batch, heads, seq, seq] relations, got {t.shape}")
    mask = np.asarray(mask, dtype=bool)
    b, r, s, _ = t.shape
    if mask.shape != (b, s):
        raise ShapeError(f"mask shape {mask.shape} does not match relations {t.shape}")

    n_valid_rows = int(mask.sum())
    if n_valid_rows == 0:
        raise DegenerateRowError("every query row is masked; nothing to compare")
    key_mask = mask[:, None, None, :]
    p_t, logp_t = _teacher_log_probs(t.astype(np.float64), np.broadcast_to(key_mask, t.shape))

    # Row weights zero out PAD query rows; p_t is already 0 at PAD keys.
    row_w = mask[:, None, :, None].astype(np.float64)
    denom = float(r * n_valid_rows)
    weighted_p = (row_w * p_t) / denom
    const_term = float((weighted_p * logp_t).sum())

    logp_s = nk.log_softmax_rows(student_logits, mask=key_mask)
    w_dtype = np.float64 if logp_s.dtype == np.float64 else np.float32
    cross = nk.sum_all(nk.mul(logp_s, weighted_p.astype(w_dtype)))
    return nk.add(nk.neg(cross), const_term)


def distill_loss(
    teacher_capture: AttentionCapture,
    student_capture: AttentionCapture,
    cfg: RelationConfig,
    mask: np.ndarray,
) -> tuple[nk.Tensor, dict[str, float]]:
    """Weighted sum of per-pair relation KLs, plus the per-pair breakdown.

    The teacher capture is detached so gradients reach only the student.
    """
    pairs = {
        "qq": (teacher_capture.q, student_capture.q),
        "kk": (teacher_capture.k, student_capture.k),
        "vv": (teacher_capture.v, student_capture.v),
    }
    weights = cfg.pair_weights()
    breakdown: dict[str, float] = {}
    total: nk.Tensor | None = None
    for name, (t_x, s_x) in pairs.items():
        t_rel = relation_logits(to_relation_heads(t_x.detach(), cfg.relation_heads))
        s_rel = relation_logits(to_relation_heads(s_x, cfg.relation_heads))
        kl = relation_kl(t_rel, s_rel, mask)
        breakdown[name] = float(kl.data)
        term = nk.mul(kl, weights[name])
        total = term if total is None else nk.add(total, term)
    assert total is not None
    return total, breakdown
