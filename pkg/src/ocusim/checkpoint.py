"""Versioned plain-text checkpoints for trained models.

The format is line-oriented and human-diffable: a header of key = value
metadata, one [geometry] section, then one [array NAME] section per stored
tensor with its shape and decimal payload rows.  Floats are written with
repr(), which round-trips float64 exactly, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .optics import OcuGeometry, OcuModel

FORMAT_NAME = "ocusim-checkpoint"
FORMAT_VERSION = 1

_GEOMETRY_SCALARS = (
    "wavelength", "slab_index", "slot_index", "layer_gap", "aperture",
    "metaunit_period", "slot_width", "slot_gap", "slot_height",
    "amplitude_coeff", "phase_coeff",
)
_GEOMETRY_INTS = ("num_layers", "metaunits_per_layer", "num_inputs")


@dataclass
class Checkpoint:
    kind: str
    meta: dict[str, str]
    geometry: OcuGeometry | None
    arrays: dict[str, np.ndarray]


def _fmt_row(row) -> str:
    return " ".join(repr(float(x)) for x in row)


def write_checkpoint(path, kind: str, meta: dict, geometry: OcuGeometry | None,
                     arrays: dict[str, np.ndarray]) -> None:
    lines = [f"{FORMAT_NAME} {FORMAT_VERSION}", f"kind = {kind}"]
    for key in sorted(meta):
        value = str(meta[key])
        if "\n" in value:
            raise ValueError(f"metadata value for {key!r} must be single-line")
        lines.append(f"{key} = {value}")
    if geometry is not None:
        lines.append("[geometry]")
        for name in _GEOMETRY_SCALARS:
            lines.append(f"{name} = {getattr(geometry, name)!r}")
        for name in _GEOMETRY_INTS:
            lines.append(f"{name} = {getattr(geometry, name)}")
        lines.append(f"input_positions = {_fmt_row(geometry.input_positions)}")
        lines.append(f"output_positions = {_fmt_row(geometry.output_positions)}")
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=float)
        lines.append(f"[array {name}]")
        lines.append("shape = " + " ".join(str(d) for d in arr.shape))
        rows = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
        for row in rows:
            lines.append(_fmt_row(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_checkpoint(path) -> Checkpoint:
    text = Path(path).read_text(encoding="ascii")
    lines = text.splitlines()
    if not lines:
        raise ValueError(f"{path}: empty checkpoint")
    head = lines[0].split()
    if len(head) != 2 or head[0] != FORMAT_NAME:
        raise ValueError(f"{path}: not an {FORMAT_NAME} file")
    if int(head[1]) != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {head[1]}")

    meta: dict[str, str] = {}
    geometry = None
    arrays: dict[str, np.ndarray] = {}
    i = 1
    # header
    while i < len(lines) and not lines[i].startswith("["):
        key, _, value = lines[i].partition(" = ")
        meta[key] = value
        i += 1
    kind = meta.pop("kind", "")
    if not kind:
        raise ValueError(f"{path}: checkpoint missing kind")
    # sections
    while i < len(lines):
        header = lines[i].strip()
        i += 1
        if header == "[geometry]":
            fields: dict[str, str] = {}
            while i < len(lines) and not lines[i].startswith("["):
                key, _, value = lines[i].partition(" = ")
                fields[key] = value
                i += 1
            kwargs = {name: float(fields[name]) for name in _GEOMETRY_SCALARS}
            kwargs.update({name: int(fields[name]) for name in _GEOMETRY_INTS})
            kwargs["input_positions"] = np.array(
                [float(v) for v in fields["input_positions"].split()])
            kwargs["output_positions"] = np.array(
                [float(v) for v in fields["output_positions"].split()])
            geometry = OcuGeometry(**kwargs)
        elif header.startswith("[array ") and header.endswith("]"):
            name = header[len("[array "):-1]
            shape = tuple(int(d) for d in lines[i].partition(" = ")[2].split())
            i += 1
            values: list[float] = []
            while i < len(lines) and not lines[i].startswith("["):
                values.extend(float(v) for v in lines[i].split())
                i += 1
            arr = np.array(values)
            if arr.size != int(np.prod(shape)):
                raise ValueError(f"{path}: array {name} payload does not match shape")
            arrays[name] = arr.reshape(shape)
        else:
            raise ValueError(f"{path}: unrecognized section {header!r}")
    return Checkpoint(kind, meta, geometry, arrays)


# ---------------------------------------------------------------------------
# single-unit checkpoints
# ---------------------------------------------------------------------------

def save_ocu_model(path, model: OcuModel, provenance: dict | None = None) -> None:
    meta = {"kappa": repr(model.detection_gain)}
    meta.update({k: str(v) for k, v in (provenance or {}).items()})
    write_checkpoint(path, "ocu", meta, model.geometry, {"phases": model.phases})


def load_ocu_model(path) -> tuple[OcuModel, dict]:
    ckpt = read_checkpoint(path)
    if ckpt.kind != "ocu":
        raise ValueError(f"{path}: expected an ocu checkpoint, found {ckpt.kind!r}")
    if ckpt.geometry is None:
        raise ValueError(f"{path}: ocu checkpoint missing geometry")
    kappa = float(ckpt.meta["kappa"])
    model = OcuModel(ckpt.geometry, ckpt.arrays["phases"], kappa)
    return model, ckpt.meta


# ---------------------------------------------------------------------------
# network checkpoints
# ---------------------------------------------------------------------------

def _network_arrays(net) -> dict[str, np.ndarray]:
    from .nn import BatchNormLayer, OclLayer

    arrays: dict[str, np.ndarray] = {}
    for idx, layer in enumerate(net.layers):
        for p in layer.params():
            arrays[f"layer{idx}.{p.name}"] = p.value
        if isinstance(layer, BatchNormLayer):
            arrays[f"layer{idx}.running_mean"] = layer.running_mean
            arrays[f"layer{idx}.running_var"] = layer.running_var
        if isinstance(layer, OclLayer):
            arrays[f"layer{idx}.port_sign"] = layer.port_sign
    return arrays


def save_network(path, net, kind: str, geometry: OcuGeometry | None,
                 topology: dict, provenance: dict | None = None) -> None:
    """Persist a classifier or denoiser: topology keys rebuild the stack,
    array sections restore its parameters and running statistics."""
    meta = {f"topo.{k}": str(v) for k, v in topology.items()}
    meta.update({k: str(v) for k, v in (provenance or {}).items()})
    write_checkpoint(path, kind, meta, geometry, _network_arrays(net))


def load_network(path):
    """Rebuild a network checkpoint; returns (net, kind, topology, meta)."""
    from .networks import build_classifier, build_denoiser
    from .nn import BatchNormLayer, OclLayer

    ckpt = read_checkpoint(path)
    topo = {k[len("topo."):]: v for k, v in ckpt.meta.items() if k.startswith("topo.")}
    optical = topo.get("optical", "true") == "true"
    if ckpt.kind == "classifier":
        net = build_classifier(
            ckpt.geometry,
            kernels=int(topo["kernels"]),
            channels=int(topo["channels"]),
            image_size=int(topo["image_size"]),
            n_classes=int(topo["n_classes"]),
            seed=int(topo.get("seed", 0)),
            optical=optical,
            hidden=tuple(int(v) for v in topo["hidden"].split()),
            pool_mode=topo.get("pool", "mean"),
        )
    elif ckpt.kind == "denoiser":
        net = build_denoiser(
            ckpt.geometry,
            input_kernels=int(topo["input_kernels"]),
            middle_kernels=int(topo["middle_kernels"]),
            in_channels=int(topo.get("in_channels", 1)),
            middle_layers=int(topo.get("middle_layers", 1)),
            seed=int(topo.get("seed", 0)),
            optical=optical,
        )
    else:
        raise ValueError(f"{path}: unknown network kind {ckpt.kind!r}")

    for idx, layer in enumerate(net.layers):
        for p in layer.params():
            p.value[...] = ckpt.arrays[f"layer{idx}.{p.name}"]
        if isinstance(layer, BatchNormLayer):
            layer.running_mean[...] = ckpt.arrays[f"layer{idx}.running_mean"]
            layer.running_var[...] = ckpt.arrays[f"layer{idx}.running_var"]
        if isinstance(layer, OclLayer):
            layer.port_sign[...] = ckpt.arrays[f"layer{idx}.port_sign"]
    return net, ckpt.kind, topo, ckpt.meta
