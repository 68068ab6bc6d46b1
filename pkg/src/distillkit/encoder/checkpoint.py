"""Bit-exact binary checkpoint format.

Layout: 8-byte magic ``TIMECKP1``, a 4-byte little-endian unsigned manifest
length, a UTF-8 JSON manifest ``{version, config, step, tensors}``, then one
raw blob of little-endian float32 values. Tensor offsets are blob-relative,
ascending, and contiguous (no padding).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .. import numkit as nk
from ..errors import CheckpointError
from .model import EncoderWeights, ModelConfig, param_shapes

MAGIC = b"TIMECKP1"
VERSION = 1


def save_checkpoint(weights: EncoderWeights, config: ModelConfig, step: int, path) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, tensor in weights.parameters().items():
        raw = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "dtype": "f32",
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "version": VERSION,
        "config": config.to_dict(),
        "step": int(step),
        "tensors": entries,
    }
    payload = json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path, requires_grad: bool = False) -> tuple[EncoderWeights, ModelConfig, int]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise CheckpointError(f"{path}: truncated before manifest length")
    (mlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if len(raw) < pos + mlen:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[pos : pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest: {exc}") from exc
    pos += mlen

    if manifest.get("version") != VERSION:
        raise CheckpointError(f"{path}: unknown version {manifest.get('version')!r}")
    try:
        config = ModelConfig(**manifest["config"])
        step = int(manifest["step"])
        entries = manifest["tensors"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed manifest: {exc}") from exc

    blob = raw[pos:]
    expected_total = sum(e["nbytes"] for e in entries)
    if len(blob) != expected_total:
        raise CheckpointError(
            f"{path}: blob length mismatch: expected {expected_total} bytes, got {len(blob)}"
        )

    expected_shapes = param_shapes(config)
    tensors: dict[str, nk.Tensor] = {}
    running = 0
    for e in entries:
        name, shape = e["name"], tuple(e["shape"])
        if e.get("dtype") != "f32":
            raise CheckpointError(f"{path}: tensor '{name}' has unsupported dtype {e.get('dtype')!r}")
        if e["offset"] != running:
            raise CheckpointError(f"{path}: tensor '{name}' offset {e['offset']} != expected {running}")
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        if nbytes != e["nbytes"]:
            raise CheckpointError(
                f"{path}: tensor '{name}' nbytes {e['nbytes']} inconsistent with shape {shape}"
            )
        if name not in expected_shapes:
            raise CheckpointError(f"{path}: tensor '{name}' not implied by the stored config")
        if expected_shapes[name] != shape:
            raise CheckpointError(
                f"{path}: tensor '{name}' shape {shape} disagrees with config-derived "
                f"{expected_shapes[name]}"
            )
        data = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=running).reshape(shape)
        if not np.all(np.isfinite(data)):
            raise CheckpointError(f"{path}: tensor '{name}' contains non-finite values")
        tensors[name] = nk.Tensor(data.copy(), requires_grad=requires_grad)
        running += nbytes
    missing = set(expected_shapes) - set(tensors)
    if missing:
        raise CheckpointError(f"{path}: tensors missing from file: {sorted(missing)}")
    return EncoderWeights(config, tensors), config, step
