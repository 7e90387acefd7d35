"""Versioned checkpoint container.

A checkpoint is a zip archive holding ``manifest.json`` plus one raw
little-endian binary blob per parameter. The manifest records the format
version, the component kind (backbone / l_adapter / t_adapter / head), the
relevant configs, and every parameter's shape. Components save and load
independently and compose by parameter name.
"""

from __future__ import annotations

import json
import zipfile

import numpy as np

FORMAT = "adapterlab-ckpt v1"
KINDS = ("backbone", "l_adapter", "t_adapter", "head")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, kind: str, params: dict[str, np.ndarray],
                    config: dict | None = None, placement: dict | None = None,
                    adapter_config: dict | None = None,
                    extra: dict | None = None) -> None:
    if kind not in KINDS:
        raise CheckpointError(f"unknown component kind {kind!r}")
    manifest = {
        "format": FORMAT,
        "kind": kind,
        "dtype": "<f8",
        "config": config,
        "placement": placement,
        "adapter_config": adapter_config,
        "params": {name: list(np.asarray(v).shape) for name, v in params.items()},
    }
    if extra:
        manifest.update(extra)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2))
        for name, value in params.items():
            blob = np.ascontiguousarray(value, dtype="<f8").tobytes()
            zf.writestr(f"params/{name}.bin", blob)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (manifest, params)."""
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unsupported format {manifest.get('format')!r}")
        params = {}
        for name, shape in manifest["params"].items():
            blob = zf.read(f"params/{name}.bin")
            params[name] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
    return manifest, params
