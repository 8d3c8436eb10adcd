"""Checkpoint archive: a zip holding a JSON manifest plus raw tensor blobs.

The manifest records the format version, the flat config, the epoch counter,
the best validation loss, and a table of blobs (shape, dtype, sha256). Blobs
are raw little-endian arrays. Zip entries use fixed timestamps and sorted
names, so save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

FORMAT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    config: dict
    epoch: int
    best_val_loss: float
    model_state: dict
    optimizer_state: dict | None = None
    extra: dict = field(default_factory=dict)


def _tensor_bytes(t: torch.Tensor) -> tuple[bytes, dict]:
    arr = t.detach().cpu().contiguous().numpy()
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return le.tobytes(), {"shape": list(arr.shape), "dtype": str(arr.dtype)}


def _tensor_from_bytes(raw: bytes, info: dict) -> torch.Tensor:
    arr = np.frombuffer(raw, dtype=np.dtype(info["dtype"]).newbyteorder("<"))
    arr = arr.reshape(info["shape"]).astype(np.dtype(info["dtype"]))
    return torch.from_numpy(arr.copy())


def _extract_tensors(obj, prefix: str, blobs: dict):
    """Replace tensors in a nested structure with blob references."""
    if isinstance(obj, torch.Tensor):
        name = f"{prefix}.bin"
        blobs[name] = obj
        return {"__blob__": name}
    if isinstance(obj, dict):
        return {k: _extract_tensors(v, f"{prefix}/{k}", blobs) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        out = [_extract_tensors(v, f"{prefix}/{i}", blobs) for i, v in enumerate(obj)]
        return out if isinstance(obj, list) else {"__tuple__": out}
    return obj


def _restore_tensors(obj, loaded_blobs: dict):
    if isinstance(obj, dict):
        if "__blob__" in obj:
            return loaded_blobs[obj["__blob__"]]
        if "__tuple__" in obj:
            return tuple(_restore_tensors(v, loaded_blobs) for v in obj["__tuple__"])
        return {k: _restore_tensors(v, loaded_blobs) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore_tensors(v, loaded_blobs) for v in obj]
    return obj


def _normalize_opt_state(opt: dict | None):
    """torch optimizer states key per-param entries by int; JSON would
    stringify them silently, breaking byte-stable re-saves and resume."""
    if opt is None or "state" not in opt or not isinstance(opt["state"], dict):
        return opt
    out = dict(opt)
    out["state"] = {str(k): v for k, v in opt["state"].items()}
    return out


def _denormalize_opt_state(opt):
    if opt is None or "state" not in opt or not isinstance(opt["state"], dict):
        return opt
    out = dict(opt)
    out["state"] = {
        int(k) if isinstance(k, str) and k.isdigit() else k: v for k, v in opt["state"].items()
    }
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blobs: dict[str, torch.Tensor] = {}
    model_tree = _extract_tensors(dict(ckpt.model_state), "model", blobs)
    opt_tree = None
    if ckpt.optimizer_state is not None:
        opt_tree = _extract_tensors(_normalize_opt_state(ckpt.optimizer_state), "opt", blobs)

    blob_table = {}
    payloads = {}
    for name, tensor in blobs.items():
        raw, info = _tensor_bytes(tensor)
        info["sha256"] = hashlib.sha256(raw).hexdigest()
        blob_table[name] = info
        payloads[name] = raw

    manifest = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "best_val_loss": ckpt.best_val_loss,
        "model": model_tree,
        "optimizer": opt_tree,
        "extra": ckpt.extra,
        "blobs": blob_table,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True, indent=1).encode()

    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in ["manifest.json"] + sorted(payloads):
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_STORED
            info.external_attr = 0o600 << 16
            zf.writestr(info, manifest_bytes if name == "manifest.json" else payloads[name])


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint file not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            names = set(zf.namelist())
            if "manifest.json" not in names:
                raise CheckpointError(f"{path} has no manifest")
            manifest = json.loads(zf.read("manifest.json"))
            version = manifest.get("format_version")
            if version != FORMAT_VERSION:
                raise CheckpointError(
                    f"{path}: format version {version} != supported {FORMAT_VERSION}"
                )
            loaded = {}
            for name, info in manifest["blobs"].items():
                if name not in names:
                    raise CheckpointError(f"{path}: missing blob {name}")
                raw = zf.read(name)
                digest = hashlib.sha256(raw).hexdigest()
                if digest != info["sha256"]:
                    raise CheckpointError(f"{path}: corrupted blob {name} (hash mismatch)")
                loaded[name] = _tensor_from_bytes(raw, info)
    except zipfile.BadZipFile as e:
        raise CheckpointError(f"{path} is not a valid checkpoint archive: {e}") from e
    return Checkpoint(
        config=manifest["config"],
        epoch=manifest["epoch"],
        best_val_loss=manifest["best_val_loss"],
        model_state=_restore_tensors(manifest["model"], loaded),
        optimizer_state=_denormalize_opt_state(_restore_tensors(manifest["optimizer"], loaded)),
        extra=manifest.get("extra", {}),
    )


# model-architecture keys that must match when resuming from a checkpoint
_ARCH_KEYS = (
    "backbone.preset",
    "dct.patch_size",
    "dct.block_size",
    "decoder.schedule",
    "fusion.imperceptible",
    "fusion.rgb",
)


def check_config_compatible(loaded: dict, current: dict) -> None:
    mismatched = [
        k for k in _ARCH_KEYS if loaded.get(k) != current.get(k)
    ]
    if mismatched:
        detail = ", ".join(f"{k}: {loaded.get(k)!r} != {current.get(k)!r}" for k in mismatched)
        raise CheckpointError(f"checkpoint config mismatch on keys: {detail}")
