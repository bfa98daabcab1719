"""Checkpoint container: JSON header plus binary parameter blocks.

File layout: 4-byte magic ``TMCK``, a u32 little-endian header length, the
UTF-8 JSON header, then one array block per parameter (same binary format
as the dataset files) in the order the header lists them. Parameters
round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import arrays
from .errors import ConfigurationError

MAGIC = b"TMCK"

ENCODER_GROUPS = ("image_encoder", "text_encoder", "audio_encoder")


@dataclass
class CheckpointBundle:
    """Parameters plus run context for one training stage."""

    stage: str  # "pretrain" | "mmr"
    params: dict[str, dict[str, np.ndarray]]  # group -> parameter name -> array
    configs: dict
    corpus_digest: str
    seed: int
    loss_history: list[dict] = field(default_factory=list)
    encoder_checksum: str = ""
    meta: dict = field(default_factory=dict)


def state_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {name: p.detach().cpu().numpy().copy() for name, p in module.named_parameters()}


def load_state_arrays(module: torch.nn.Module, state: dict[str, np.ndarray]) -> None:
    names = {name for name, _ in module.named_parameters()}
    if names != set(state):
        missing = names ^ set(state)
        raise ConfigurationError(f"parameter names do not match checkpoint: {sorted(missing)}")
    with torch.no_grad():
        for name, p in module.named_parameters():
            arr = state[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise ConfigurationError(
                    f"shape mismatch for {name}: {arr.shape} vs {tuple(p.shape)}"
                )
            p.copy_(torch.from_numpy(np.ascontiguousarray(arr)).to(p.dtype))


def params_checksum(params: dict[str, dict[str, np.ndarray]],
                    groups=None) -> str:
    """SHA-256 over (group, name, serialized array) in sorted order."""
    h = hashlib.sha256()
    for group in sorted(params if groups is None else groups):
        for name in sorted(params[group]):
            h.update(group.encode())
            h.update(name.encode())
            h.update(arrays.array_to_bytes(params[group][name]))
    return h.hexdigest()


def encoder_checksum(params: dict[str, dict[str, np.ndarray]]) -> str:
    present = [g for g in ENCODER_GROUPS if g in params]
    if not present:
        raise ConfigurationError("bundle holds no encoder parameter groups")
    return params_checksum(params, groups=present)


def save_bundle(path, bundle: CheckpointBundle) -> None:
    entries = []
    blocks = []
    for group in sorted(bundle.params):
        for name in sorted(bundle.params[group]):
            arr = bundle.params[group][name]
            entries.append({
                "group": group,
                "name": name,
                "dtype": str(arr.dtype),
                "shape": list(arr.shape),
            })
            blocks.append(arrays.array_to_bytes(arr))
    header = {
        "format_version": 1,
        "stage": bundle.stage,
        "seed": bundle.seed,
        "corpus_digest": bundle.corpus_digest,
        "configs": bundle.configs,
        "loss_history": bundle.loss_history,
        "encoder_checksum": bundle.encoder_checksum,
        "meta": bundle.meta,
        "params": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for block in blocks:
            fh.write(block)


def load_bundle(path) -> CheckpointBundle:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ConfigurationError(f"{path} is not a checkpoint file")
    (header_len,) = struct.unpack_from("<I", buf, 4)
    header = json.loads(buf[8 : 8 + header_len].decode("utf-8"))
    params: dict[str, dict[str, np.ndarray]] = {}
    offset = 8 + header_len
    for entry in header["params"]:
        arr, consumed = arrays.array_from_bytes(buf, offset)
        offset += consumed
        if list(arr.shape) != entry["shape"] or str(arr.dtype) != entry["dtype"]:
            raise ConfigurationError(f"parameter block mismatch for {entry['name']}")
        params.setdefault(entry["group"], {})[entry["name"]] = arr
    if offset != len(buf):
        raise ConfigurationError("trailing bytes in checkpoint file")
    return CheckpointBundle(
        stage=header["stage"],
        params=params,
        configs=header["configs"],
        corpus_digest=header["corpus_digest"],
        seed=header["seed"],
        loss_history=header["loss_history"],
        encoder_checksum=header["encoder_checksum"],
        meta=header["meta"],
    )
