"""Bit-exact model persistence.

File layout:

    line 1   magic + format version:  ``HMCKPT 1``
    line 2   header JSON (sorted keys): config, vocabulary, tensor
             manifest (name, shape, dtype, offset, nbytes), optimizer
             scalars, training metadata
    bytes    raw little-endian tensor payloads, in manifest order
    last 4   CRC-32 (little-endian) over every preceding byte

Saving is atomic (temp file + rename) and produces identical bytes for
identical inputs. Loading validates version, checksum, and the tensor
manifest against the embedded config before returning anything.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointTensorError,
    CheckpointVersionError,
)
from .model import EncoderWeights, ModelConfig, expected_shapes
from .optim import AdamState
from .tokenization import Vocab

MAGIC = "HMCKPT"
FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocab
    tensors: dict[str, np.ndarray]
    optimizer: dict | None = None
    metadata: dict = field(default_factory=dict)


def _dtype_tag(arr: np.ndarray) -> str:
    tag = {4: "<f4", 8: "<f8"}.get(arr.dtype.itemsize)
    if arr.dtype.kind != "f" or tag is None:
        raise CheckpointTensorError(f"unsupported tensor dtype {arr.dtype}")
    return tag


def _all_tensors(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    out = dict(ckpt.tensors)
    if ckpt.optimizer is not None:
        for key in ("m", "v"):
            for name, arr in ckpt.optimizer[key].items():
                out[f"adam.{key}.{name}"] = arr
    return out


def save(ckpt: Checkpoint, path) -> None:
    """Atomically write a checkpoint; identical inputs give identical bytes."""
    tensors = _all_tensors(ckpt)
    manifest = []
    offset = 0
    order = sorted(tensors)
    for name in order:
        arr = tensors[name]
        tag = _dtype_tag(arr)
        nbytes = arr.size * arr.dtype.itemsize
        manifest.append(
            {"name": name, "shape": list(arr.shape), "dtype": tag,
             "offset": offset, "nbytes": nbytes}
        )
        offset += nbytes
    optimizer_scalars = None
    if ckpt.optimizer is not None:
        optimizer_scalars = {
            k: ckpt.optimizer[k]
            for k in ("beta1", "beta2", "eps", "weight_decay", "step_count",
                      "beta1_product", "beta2_product")
        }
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "vocab": {"tokens": ckpt.vocab.id_to_token, "casing": ckpt.vocab.casing},
        "tensors": manifest,
        "optimizer": optimizer_scalars,
        "metadata": ckpt.metadata,
    }
    blob = bytearray()
    blob += f"{MAGIC} {FORMAT_VERSION}\n".encode()
    blob += json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob += b"\n"
    for name in order:
        arr = tensors[name]
        blob += np.ascontiguousarray(arr, dtype=_DTYPES[_dtype_tag(arr)]).tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load(path) -> Checkpoint:
    """Read and validate a checkpoint file."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise CheckpointChecksumError(f"{path}: truncated file")
    body, crc_bytes = raw[:-4], raw[-4:]
    if struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF) != crc_bytes:
        raise CheckpointChecksumError(f"{path}: CRC-32 mismatch")
    magic_line, _, rest = body.partition(b"\n")
    parts = magic_line.decode(errors="replace").split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointVersionError(f"{path}: not a checkpoint file")
    if int(parts[1]) != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {parts[1]} unsupported (expected {FORMAT_VERSION})"
        )
    header_line, _, payload = rest.partition(b"\n")
    header = json.loads(header_line)
    config = ModelConfig(**header["config"])
    vocab = Vocab(header["vocab"]["tokens"], header["vocab"]["casing"])
    if config.vocab_size != len(vocab):
        raise CheckpointTensorError(
            f"{path}: config expects vocab of {config.vocab_size}, "
            f"embedded vocabulary has {len(vocab)} tokens"
        )

    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dtype = _DTYPES[entry["dtype"]]
        start, nbytes = entry["offset"], entry["nbytes"]
        chunk = payload[start : start + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointTensorError(f"{path}: payload truncated at {entry['name']!r}")
        arr = np.frombuffer(chunk, dtype=dtype).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr

    model_tensors = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    for name, shape in expected_shapes(config).items():
        if name not in model_tensors:
            raise CheckpointTensorError(f"{path}: missing tensor {name!r}")
        if model_tensors[name].shape != shape:
            raise CheckpointTensorError(
                f"{path}: tensor {name!r} has shape {model_tensors[name].shape}, expected {shape}"
            )

    optimizer = None
    if header["optimizer"] is not None:
        optimizer = dict(header["optimizer"])
        optimizer["m"] = {
            k[len("adam.m."):]: v for k, v in tensors.items() if k.startswith("adam.m.")
        }
        optimizer["v"] = {
            k[len("adam.v."):]: v for k, v in tensors.items() if k.startswith("adam.v.")
        }
    return Checkpoint(
        config=config, vocab=vocab, tensors=model_tensors,
        optimizer=optimizer, metadata=header["metadata"],
    )


def from_model(
    weights: EncoderWeights,
    vocab: Vocab,
    state: AdamState | None = None,
    metadata: dict | None = None,
) -> Checkpoint:
    """Snapshot live weights (and optionally optimizer state) for saving."""
    tensors = {name: t.data.copy() for name, t in weights.tensors.items()}
    optimizer = None
    if state is not None:
        optimizer = {
            "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
            "weight_decay": state.weight_decay, "step_count": state.step_count,
            "beta1_product": state.beta1_product, "beta2_product": state.beta2_product,
            "m": {k: v.copy() for k, v in state.m.items()},
            "v": {k: v.copy() for k, v in state.v.items()},
        }
    return Checkpoint(
        config=weights.config, vocab=vocab, tensors=tensors,
        optimizer=optimizer, metadata=dict(metadata or {}),
    )


def to_model(ckpt: Checkpoint):
    """Rebuild (EncoderWeights, AdamState | None) from a checkpoint."""
    from .autodiff import Tensor

    fixed_pos = ckpt.config.positional == "sinusoidal"
    tensors = {
        name: Tensor(arr.copy(), requires_grad=not (fixed_pos and name == "pos_emb"))
        for name, arr in ckpt.tensors.items()
    }
    weights = EncoderWeights(ckpt.config, tensors)
    state = None
    if ckpt.optimizer is not None:
        params = weights.trainable()
        state = AdamState(
            params,
            beta1=ckpt.optimizer["beta1"], beta2=ckpt.optimizer["beta2"],
            eps=ckpt.optimizer["eps"], weight_decay=ckpt.optimizer["weight_decay"],
        )
        state.step_count = ckpt.optimizer["step_count"]
        state.beta1_product = ckpt.optimizer["beta1_product"]
        state.beta2_product = ckpt.optimizer["beta2_product"]
        for k in params:
            state.m[k] = ckpt.optimizer["m"][k].copy()
            state.v[k] = ckpt.optimizer["v"][k].copy()
    return weights, state
