"""Checkpoint directory: ``manifest.json`` plus a flat little-endian float64 payload."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .network import ModelConfig, check_params

FORMAT = "trajcube-checkpoint/1"
PAYLOAD = "params.f64"


def save_checkpoint(directory, params, model_cfg: ModelConfig, seed: int, epoch: int, extra=None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    table = []
    offset = 0
    chunks = []
    for name, shape in model_cfg.param_shapes().items():
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        table.append({"name": name, "shape": list(shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
        chunks.append(arr.ravel())
    np.concatenate(chunks).tofile(d / PAYLOAD)
    manifest = {
        "format": FORMAT,
        "model": model_cfg.to_json(),
        "tensors": table,
        "seed": int(seed),
        "epoch": int(epoch),
        "payload": PAYLOAD,
    }
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return d


def load_checkpoint(directory):
    """Returns ``(params, model_cfg, manifest)``; every shape is validated."""
    d = Path(directory)
    path = d / "manifest.json"
    if not path.exists():
        raise ValueError(f"no checkpoint manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
    cfg = ModelConfig.from_json(manifest["model"])
    flat = np.fromfile(d / manifest.get("payload", PAYLOAD), dtype="<f8")
    params = {}
    for entry in manifest["tensors"]:
        lo, n = entry["offset"], entry["count"]
        if lo + n > flat.size:
            raise ValueError(f"checkpoint payload truncated at tensor {entry['name']}")
        params[entry["name"]] = flat[lo:lo + n].reshape(entry["shape"]).astype(np.float64)
    check_params(params, cfg)
    return params, cfg, manifest
