"""Checkpoints: ``manifest.json`` plus one raw little-endian float64 file per tensor."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .baselines import model_class

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


def save_checkpoint(model, out_dir, *, model_kind: str | None = None,
                    config: dict | None = None, seed: int | None = None,
                    fingerprint: str | None = None, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name, arr in model.tensors().items():
        fname = f"{name}.f64"
        np.ascontiguousarray(arr, dtype="<f8").tofile(out / fname)
        tensors[name] = {"file": fname, "shape": list(arr.shape)}
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_kind": model_kind or model.kind,
        **model.shape(),
        "tensors": tensors,
        "config": config or {},
        "seed": seed,
        "dataset_fingerprint": fingerprint,
        "init": "normal(0, 0.1^2) embeddings/prototypes; connections normal(0, 1/sqrt(Lu*Lt))",
    }
    if extra:
        manifest.update(extra)
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                encoding="utf-8")
    return out


def read_manifest(ckpt_dir) -> dict:
    path = Path(ckpt_dir) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_checkpoint(ckpt_dir):
    """Returns ``(model, manifest)``."""
    ckpt_dir = Path(ckpt_dir)
    manifest = read_manifest(ckpt_dir)
    cls = model_class(manifest["model_kind"])
    arrays = {}
    for name, entry in manifest["tensors"].items():
        shape = tuple(entry["shape"])
        data = np.fromfile(ckpt_dir / entry["file"], dtype="<f8")
        if data.size != int(np.prod(shape)):
            raise ValueError(f"{entry['file']}: expected {np.prod(shape)} values, got {data.size}")
        arrays[name] = data.reshape(shape).astype(np.float64)
    return cls(**arrays), manifest
