"""Versioned binary checkpoint for the field networks.

Layout: magic b"NSDF" | format version u32 LE | header length u32 LE |
UTF-8 JSON header (architecture, dtype, named parameter blocks, extras) |
parameter blocks as little-endian float64 in header order.  Round trips are
bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .fields import RadianceField, RadianceSpec, SdfField, SdfSpec
from .render import SScale

MAGIC = b"NSDF"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _blocks(module: torch.nn.Module, prefix: str):
    for name, p in module.named_parameters():
        yield f"{prefix}.{name}", p


def save_fields(path, sdf_field: SdfField, radiance_field: RadianceField, s_scale: SScale,
                extras: dict | None = None) -> None:
    blocks = list(_blocks(sdf_field, "sdf")) + list(_blocks(radiance_field, "radiance")) \
        + list(_blocks(s_scale, "s"))
    header = {
        "dtype": str(sdf_field.layers[0].weight.dtype).replace("torch.", ""),
        "sdf": {
            "hidden": list(sdf_field.spec.hidden),
            "feature_dim": sdf_field.spec.feature_dim,
            "encoding_levels": sdf_field.spec.encoding_levels,
            "skip_layers": sorted(sdf_field.spec.skip_layers),
        },
        "radiance": {
            "hidden": list(radiance_field.spec.hidden),
            "feature_dim": radiance_field.spec.feature_dim,
            "dir_encoding_levels": radiance_field.spec.dir_encoding_levels,
        },
        "blocks": [{"name": n, "shape": list(p.shape)} for n, p in blocks],
        "extras": extras or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for _, p in blocks:
            arr = p.detach().double().numpy().astype("<f8")
            fh.write(arr.tobytes())


def load_fields(path) -> tuple[SdfField, RadianceField, SScale, dict]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version = struct.unpack("<I", data[4:8])[0]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    hlen = struct.unpack("<I", data[8:12])[0]
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    dtype = getattr(torch, header["dtype"])

    sdf_spec = SdfSpec(hidden=tuple(header["sdf"]["hidden"]),
                       feature_dim=header["sdf"]["feature_dim"],
                       encoding_levels=header["sdf"]["encoding_levels"],
                       skip_layers=frozenset(header["sdf"]["skip_layers"]))
    rad_spec = RadianceSpec(hidden=tuple(header["radiance"]["hidden"]),
                            feature_dim=header["radiance"]["feature_dim"],
                            dir_encoding_levels=header["radiance"]["dir_encoding_levels"])
    sdf_field = SdfField(sdf_spec, dtype=dtype)
    radiance_field = RadianceField(rad_spec, dtype=dtype)
    s_scale = SScale(dtype=dtype)

    params = {name: p for m, prefix in ((sdf_field, "sdf"), (radiance_field, "radiance"), (s_scale, "s"))
              for name, p in _blocks(m, prefix)}
    offset = 12 + hlen
    with torch.no_grad():
        for block in header["blocks"]:
            name, shape = block["name"], tuple(block["shape"])
            if name not in params:
                raise CheckpointError(f"{path}: unknown parameter block {name!r}")
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape)
            params[name].copy_(torch.from_numpy(arr.copy()).to(dtype))
            offset += n * 8
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes ({len(data) - offset})")
    return sdf_field, radiance_field, s_scale, header["extras"]
