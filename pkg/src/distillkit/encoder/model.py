"""Configurable Transformer encoders for both architecture families.

The same stack serves teachers (bucketed relative position bias, GeGLU feed
forward) and students (learned absolute positions, GELU). Blocks are pre-LN
for stability at small scale. A forward pass can capture the post-projection
Q/K/V of one layer for relation transfer.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .. import numkit as nk
from ..errors import ConfigError, ShapeError, SkipBatch
from ..textdata import TokenBatch, UNK_ID

LN_EPS = 1e-5
INIT_STD = 0.02

POS_ABSOLUTE = "absolute"
POS_RELATIVE = "relative"
ACT_GELU = "gelu"
ACT_GEGLU = "geglu"


@dataclass
class ModelConfig:
    """Architecture description; fully determines every parameter shape."""

    n_layers: int
    hidden: int
    n_heads: int
    vocab_size: int
    max_seq_len: int
    ffn_size: int = 0  # 0 means the conventional 4 * hidden
    pos_kind: str = POS_ABSOLUTE
    act_kind: str = ACT_GELU
    dropout: float = 0.1
    rel_buckets: int = 32
    rel_max_distance: int = 128

    def __post_init__(self):
        if self.ffn_size == 0:
            self.ffn_size = 4 * self.hidden
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.ffn_size < 1:
            raise ConfigError(f"ffn_size must be >= 1, got {self.ffn_size}")
        if self.hidden % self.n_heads != 0:
            raise ConfigError(
                f"hidden ({self.hidden}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size must cover the specials, got {self.vocab_size}")
        if self.max_seq_len < 1:
            raise ConfigError("max_seq_len must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.pos_kind not in (POS_ABSOLUTE, POS_RELATIVE):
            raise ConfigError(f"unknown pos_kind '{self.pos_kind}'")
        if self.act_kind not in (ACT_GELU, ACT_GEGLU):
            raise ConfigError(f"unknown act_kind '{self.act_kind}'")
        if self.pos_kind == POS_RELATIVE:
            if self.rel_buckets < 4:
                raise ConfigError(f"rel_buckets must be >= 4, got {self.rel_buckets}")
            if self.rel_max_distance < 2:
                raise ConfigError(f"rel_max_distance must be >= 2, got {self.rel_max_distance}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.n_heads

    @property
    def ffn_up_size(self) -> int:
        # GeGLU splits the up-projection into value and gate halves.
        return 2 * self.ffn_size if self.act_kind == ACT_GEGLU else self.ffn_size

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttentionCapture:
    """Post-projection, pre-attention Q/K/V of one layer, as [batch, seq, hidden]."""

    layer_index: int
    q: nk.Tensor
    k: nk.Tensor
    v: nk.Tensor


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Ordered name -> shape map for every parameter of ``config``."""
    h = config.hidden
    shapes: dict[str, tuple] = {"tok_emb": (config.vocab_size, h)}
    if config.pos_kind == POS_ABSOLUTE:
        shapes["pos_emb"] = (config.max_seq_len, h)
    else:
        shapes["rel_pos_table"] = (config.rel_buckets, config.n_heads)
    up = config.ffn_up_size
    for i in range(config.n_layers):
        p = f"layers.{i}"
        shapes[f"{p}.ln1.gain"] = (h,)
        shapes[f"{p}.ln1.bias"] = (h,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{name}"] = (h, h)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[f"{p}.attn.{name}"] = (h,)
        shapes[f"{p}.ln2.gain"] = (h,)
        shapes[f"{p}.ln2.bias"] = (h,)
        shapes[f"{p}.ffn.w_up"] = (h, up)
        shapes[f"{p}.ffn.b_up"] = (up,)
        shapes[f"{p}.ffn.w_down"] = (config.ffn_size, h)
        shapes[f"{p}.ffn.b_down"] = (h,)
    shapes["final_ln.gain"] = (h,)
    shapes["final_ln.bias"] = (h,)
    shapes["mlm_bias"] = (config.vocab_size,)
    return shapes


def is_no_decay(name: str) -> bool:
    """Weight decay skips biases and layer-norm affine parameters."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf == "gain" or leaf.endswith("bias") or leaf in {"bq", "bk", "bv", "bo", "b_up", "b_down"}


class EncoderWeights:
    """Parameter set of one encoder; shapes fixed by its ModelConfig."""

    def __init__(self, config: ModelConfig, tensors: dict[str, nk.Tensor]):
        expected = param_shapes(config)
        if set(tensors) != set(expected):
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise ConfigError(f"weight names mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError(
                    f"weight '{name}' has shape {tensors[name].shape}, config implies {shape}"
                )
        self.config = config
        self.tensors = {name: tensors[name] for name in expected}  # canonical order

    def __getitem__(self, name: str) -> nk.Tensor:
        return self.tensors[name]

    def parameters(self) -> dict[str, nk.Tensor]:
        return self.tensors

    def num_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = flag

    def copy(self) -> "EncoderWeights":
        return EncoderWeights(
            self.config,
            {
                n: nk.Tensor(t.data.copy(), requires_grad=t.requires_grad)
                for n, t in self.tensors.items()
            },
        )


def _truncated_normal(rng: np.random.Generator, shape: tuple, std: float) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(np.float32)


def init_model(config: ModelConfig, seed: int) -> EncoderWeights:
    """Truncated-normal(0, 0.02^2, +/-2 sigma) weights; zero biases; unit LN gains."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, nk.Tensor] = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            data = np.ones(shape, dtype=np.float32)
        elif leaf == "bias" or leaf.startswith("b"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            data = _truncated_normal(rng, shape, INIT_STD)
        tensors[name] = nk.Tensor(data, requires_grad=True)
    return EncoderWeights(config, tensors)


def relative_bucket(i_minus_j: int, n_buckets: int, max_distance: int) -> int:
    """Bucket id for a signed token offset.

    Half the bucket range covers negative offsets. Within each sign, small
    offsets get exact buckets and larger ones share log-spaced buckets up to
    ``max_distance``, beyond which everything clamps to the last bucket.
    """
    if n_buckets < 4:
        raise ConfigError(f"n_buckets must be >= 4, got {n_buckets}")
    if max_distance < 2:
        raise ConfigError(f"max_distance must be >= 2, got {max_distance}")
    return int(_bucket_array(np.asarray(i_minus_j), n_buckets, max_distance))


def _bucket_array(offsets: np.ndarray, n_buckets: int, max_distance: int) -> np.ndarray:
    half = n_buckets // 2
    sign_shift = np.where(offsets < 0, half, 0)
    n = np.abs(offsets)
    max_exact = max(half // 2, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log(np.maximum(n, 1) / max_exact) / np.log(max_distance / max_exact)
    large = max_exact + (log_ratio * (half - max_exact)).astype(np.int64)
    large = np.minimum(large, half - 1)
    base = np.where(n < max_exact, n, large)
    return (sign_shift + base).astype(np.int64)


@lru_cache(maxsize=32)
def bucket_matrix(seq_len: int, n_buckets: int, max_distance: int) -> np.ndarray:
    """[seq, seq] matrix of bucket ids for offsets i - j."""
    pos = np.arange(seq_len)
    offsets = pos[:, None] - pos[None, :]
    out = _bucket_array(offsets, n_buckets, max_distance)
    out.setflags(write=False)
    return out


def forward(
    weights: EncoderWeights,
    batch: TokenBatch,
    capture_layer: Optional[int] = None,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[nk.Tensor, Optional[AttentionCapture]]:
    """Run the encoder stack; optionally capture one layer's Q/K/V.

    PAD keys are excluded from every attention softmax. Dropout fires only in
    ``train_mode`` (requires ``rng``). ``capture_layer`` is 1-based.
    """
    cfg = weights.config
    W = weights.tensors
    ids = batch.ids
    b, s = ids.shape
    if ids.max() >= cfg.vocab_size:
        raise ShapeError(f"token id {int(ids.max())} out of range for vocab {cfg.vocab_size}")
    if s > cfg.max_seq_len:
        raise ShapeError(f"sequence length {s} exceeds max_seq_len {cfg.max_seq_len}")
    if capture_layer is not None and not 1 <= capture_layer <= cfg.n_layers:
        raise ConfigError(
            f"capture_layer {capture_layer} outside [1, {cfg.n_layers}]"
        )
    p = cfg.dropout

    x = nk.gather_rows(W["tok_emb"], ids)
    if cfg.pos_kind == POS_ABSOLUTE:
        x = x + nk.gather_rows(W["pos_emb"], np.arange(s))
    x = nk.dropout(x, p, rng, train_mode)

    rel_bias = None
    if cfg.pos_kind == POS_RELATIVE:
        buckets = bucket_matrix(s, cfg.rel_buckets, cfg.rel_max_distance)
        bias = nk.gather_rows(W["rel_pos_table"], buckets)  # [s, s, heads]
        rel_bias = nk.transpose(bias, (2, 0, 1))  # [heads, s, s]

    key_mask = batch.attention_mask[:, None, None, :]  # [b, 1, 1, s]
    a, dh = cfg.n_heads, cfg.head_dim
    scale = 1.0 / np.sqrt(dh)
    capture = None

    for i in range(cfg.n_layers):
        pre = f"layers.{i}"
        h = nk.layer_norm(x, W[f"{pre}.ln1.gain"], W[f"{pre}.ln1.bias"], LN_EPS)
        q = nk.matmul(h, W[f"{pre}.attn.wq"]) + W[f"{pre}.attn.bq"]
        k = nk.matmul(h, W[f"{pre}.attn.wk"]) + W[f"{pre}.attn.bk"]
        v = nk.matmul(h, W[f"{pre}.attn.wv"]) + W[f"{pre}.attn.bv"]
        if capture_layer == i + 1:
            capture = AttentionCapture(layer_index=i + 1, q=q, k=k, v=v)
        qh = nk.transpose(nk.reshape(q, (b, s, a, dh)), (0, 2, 1, 3))
        kh = nk.transpose(nk.reshape(k, (b, s, a, dh)), (0, 2, 1, 3))
        vh = nk.transpose(nk.reshape(v, (b, s, a, dh)), (0, 2, 1, 3))
        logits = nk.matmul(qh, nk.transpose(kh, (0, 1, 3, 2))) * scale
        if rel_bias is not None:
            logits = logits + rel_bias
        probs = nk.softmax_rows(logits, mask=key_mask)
        ctx = nk.matmul(probs, vh)
        ctx = nk.reshape(nk.transpose(ctx, (0, 2, 1, 3)), (b, s, cfg.hidden))
        attn_out = nk.matmul(ctx, W[f"{pre}.attn.wo"]) + W[f"{pre}.attn.bo"]
        x = x + nk.dropout(attn_out, p, rng, train_mode)

        h2 = nk.layer_norm(x, W[f"{pre}.ln2.gain"], W[f"{pre}.ln2.bias"], LN_EPS)
        up = nk.matmul(h2, W[f"{pre}.ffn.w_up"]) + W[f"{pre}.ffn.b_up"]
        act = nk.geglu(up) if cfg.act_kind == ACT_GEGLU else nk.gelu(up)
        down = nk.matmul(act, W[f"{pre}.ffn.w_down"]) + W[f"{pre}.ffn.b_down"]
        x = x + nk.dropout(down, p, rng, train_mode)

    x = nk.layer_norm(x, W["final_ln.gain"], W["final_ln.bias"], LN_EPS)
    return x, capture


def mlm_loss(
    weights: EncoderWeights,
    batch: TokenBatch,
    mask_prob: float,
    rng: np.random.Generator,
    train_mode: bool = True,
) -> nk.Tensor:
    """Masked-token cross-entropy with the 80/10/10 corruption split.

    The prediction head is the transposed token embedding plus a bias.
    Raises :class:`SkipBatch` when no position gets selected.
    """
    if not 0.0 < mask_prob < 1.0:
        raise ConfigError(f"mask_prob must be in (0, 1), got {mask_prob}")
    cfg = weights.config
    maskable = batch.attention_mask
    selected = maskable & (rng.random(batch.ids.shape) < mask_prob)
    if not selected.any():
        raise SkipBatch("no maskable positions selected")

    corrupted = batch.ids.copy()
    roll = rng.random(batch.ids.shape)
    as_mask = selected & (roll < 0.8)
    as_random = selected & (roll >= 0.8) & (roll < 0.9)
    corrupted[as_mask] = UNK_ID
    corrupted[as_random] = rng.integers(0, cfg.vocab_size, size=int(as_random.sum()))

    hidden, _ = forward(
        weights,
        TokenBatch(ids=corrupted, attention_mask=batch.attention_mask),
        train_mode=train_mode,
        rng=rng,
    )
    flat = nk.reshape(hidden, (batch.batch_size * batch.seq_len, cfg.hidden))
    positions = np.flatnonzero(selected.reshape(-1))
    picked = nk.gather_rows(flat, positions)
    logits = nk.matmul(picked, nk.transpose(weights["tok_emb"], (1, 0))) + weights["mlm_bias"]
    logp = nk.log_softmax_rows(logits)
    targets = batch.ids.reshape(-1)[positions]
    onehot = np.zeros((len(positions), cfg.vocab_size), dtype=np.float32)
    onehot[np.arange(len(positions)), targets] = 1.0
    return nk.mul(nk.sum_all(nk.mul(logp, onehot)), -1.0 / len(positions))
