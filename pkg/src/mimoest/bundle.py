"""Model persistence: a JSON manifest plus one raw float64 payload.

A bundle is a directory holding ``manifest.json`` and ``payload.bin``. Tensors
are written in manifest order as little-endian 8-byte floats in column-major
order; complex tensors store the real block followed by the imaginary block.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import BundleError, PayloadLengthMismatch, SchemaVersionMismatch
from .pilot_net import PilotNet
from .residual_net import ResidualNet

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
PAYLOAD = "payload.bin"


@dataclass
class ModelBundle:
    manifest: dict
    tensors: dict = field(default_factory=dict)     # name -> ndarray, manifest order

    def pilot_net(self) -> PilotNet | None:
        meta = self.manifest.get("pilot_net")
        if meta is None:
            return None
        weights = []
        for m in range(meta["n_hidden"]):
            weights.append((ad.param(self.tensors[f"pilot.W_{m + 1}"]),
                            ad.param(self.tensors[f"pilot.b_{m + 1}"])))
        weights.append((ad.param(self.tensors["pilot.W_out"]),
                        ad.param(self.tensors["pilot.b_out"])))
        return PilotNet(meta["tau"], meta["K"], meta["p_max"], weights, meta["activation"],
                        meta["dropout"])

    def residual_net(self) -> ResidualNet | None:
        meta = self.manifest.get("residual_net")
        if meta is None:
            return None
        t = self.tensors
        convs = [(ad.param(t[f"resnet.conv{m + 1}.w"]), ad.param(t[f"resnet.conv{m + 1}.b"]))
                 for m in range(meta["depth"])]
        alpha = None
        if "resnet.alpha.w" in t:
            alpha = (ad.param(t["resnet.alpha.w"]), ad.param(t["resnet.alpha.b"]))
        gamma = (ad.param(t["resnet.gamma.w"]), ad.param(t["resnet.gamma.b"]))
        return ResidualNet(meta["mode"], convs, alpha, gamma, meta["scaling"])


def _pilot_meta(net: PilotNet) -> dict:
    return {"tau": net.tau, "K": net.K, "p_max": net.p_max, "n_hidden": len(net.weights) - 1,
            "activation": net.activation, "dropout": net.dropout}


def _residual_meta(net: ResidualNet) -> dict:
    return {"mode": net.mode, "scaling": net.scaling, "depth": net.depth, "width": net.width}


def _encode(value: np.ndarray) -> bytes:
    value = np.asarray(value)
    if np.iscomplexobj(value):
        parts = [value.real, value.imag]
    else:
        parts = [value]
    return b"".join(np.asarray(p, dtype="<f8").ravel(order="F").tobytes() for p in parts)


def save_bundle(path, pilot: PilotNet | None = None, estimator: ResidualNet | None = None,
                config: dict | None = None, metadata: dict | None = None) -> Path:
    """Write a bundle directory; returns its path."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    named = {}
    if pilot is not None:
        named.update({k: v.value for k, v in pilot.named_parameters().items()})
    if estimator is not None:
        named.update({k: v.value for k, v in estimator.named_parameters().items()})
    entries, blobs, offset = [], [], 0
    for name, value in named.items():
        blob = _encode(value)
        entries.append({"name": name, "shape": list(np.shape(value)),
                        "dtype": "complex128" if np.iscomplexobj(value) else "float64",
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "created_by": "mimoest",
        "byte_order": "little",
        "storage_order": "column-major",
        "tensors": entries,
        "pilot_net": None if pilot is None else _pilot_meta(pilot),
        "residual_net": None if estimator is None else _residual_meta(estimator),
        "ablation_mode": None if estimator is None else estimator.mode,
        "train_config": config,
        "metadata": metadata or {},
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    (path / PAYLOAD).write_bytes(b"".join(blobs))
    return path


def _expected_nbytes(entry: dict) -> int:
    count = int(np.prod(entry["shape"], dtype=np.int64))
    return 8 * count * (2 if entry["dtype"] == "complex128" else 1)


def load_bundle(path) -> ModelBundle:
    """Read a bundle written by ``save_bundle``.

    Raises
    ------
    BundleError
        Missing files or a malformed manifest.
    SchemaVersionMismatch
        The manifest was written by an incompatible schema.
    PayloadLengthMismatch
        A tensor's bytes disagree with its shape, or the payload size is off.
    """
    path = Path(path)
    if not (path / MANIFEST).is_file() or not (path / PAYLOAD).is_file():
        raise BundleError(f"{path}: not a model bundle (need {MANIFEST} and {PAYLOAD})")
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path / MANIFEST}: {exc}") from exc
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"bundle schema {version}, expected {SCHEMA_VERSION}")
    payload = (path / PAYLOAD).read_bytes()
    tensors, offset = {}, 0
    for entry in manifest["tensors"]:
        need = _expected_nbytes(entry)
        if entry["nbytes"] != need or entry["offset"] != offset:
            raise PayloadLengthMismatch(f"tensor {entry['name']}: manifest inconsistent with shape")
        if offset + need > len(payload):
            raise PayloadLengthMismatch(
                f"tensor {entry['name']}: payload truncated ({len(payload)} bytes)")
        flat = np.frombuffer(payload, dtype="<f8", count=need // 8, offset=offset)
        shape = tuple(entry["shape"])
        if entry["dtype"] == "complex128":
            half = flat.size // 2
            value = (flat[:half].reshape(shape, order="F")
                     + 1j * flat[half:].reshape(shape, order="F"))
        else:
            value = flat.reshape(shape, order="F")
        tensors[entry["name"]] = np.array(value, dtype=value.dtype, order="C")
        offset += need
    if offset != len(payload):
        raise PayloadLengthMismatch(f"payload has {len(payload) - offset} trailing bytes")
    return ModelBundle(manifest, tensors)
