"""Single-file checkpoint container.

Layout: magic, u32 header length, JSON header (config, global step, blob
manifest with per-tensor CRC32, optional optimizer scalars), then the
concatenated TVT blobs. Roundtrips are bit-exact.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import tvt
from .errors import FormatError, IntegrityError, VersionError
from .model import Model
from .modelcfg import ModelConfig
from .optim import AdamHyper, AdamW

MAGIC = b"AVCP1\n"
FORMAT_VERSION = 1


@dataclass
class CheckpointBundle:
    model: Model
    optimizer: AdamW | None
    global_step: int
    extra: dict | None = None
    extra_meta: dict | None = None


def _blob_entries(model: Model, optimizer: AdamW | None, extra_params):
    for name, p in model.params().items():
        yield name, p.data
    if optimizer is not None:
        for name in optimizer.params:
            yield f"opt.m.{name}", optimizer.state.m[name]
            yield f"opt.v.{name}", optimizer.state.v[name]
    for name, p in (extra_params or {}).items():
        yield f"extra.{name}", p.data


def save_checkpoint(
    model: Model,
    path,
    optimizer: AdamW | None = None,
    global_step: int = 0,
    extra_params: dict | None = None,
    extra_meta: dict | None = None,
) -> None:
    manifest = []
    blobs = []
    offset = 0
    for name, arr in _blob_entries(model, optimizer, extra_params):
        blob = tvt.dump_bytes(arr)
        manifest.append(
            {
                "name": name,
                "offset": offset,
                "size": len(blob),
                "crc32": zlib.crc32(blob),
                "shape": list(arr.shape),
                "dtype": str(arr.dtype),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "dtype": str(model.dtype),
        "global_step": global_step,
        "manifest": manifest,
        "optimizer": None
        if optimizer is None
        else {"hyper": vars(optimizer.state.hyper), "step": optimizer.state.step},
        "extra_meta": extra_meta,
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> CheckpointBundle:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (head_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(raw[start : start + head_len])
    if header["format"] != FORMAT_VERSION:
        raise VersionError(f"checkpoint format {header['format']} != {FORMAT_VERSION}")
    cfg = ModelConfig.from_dict(header["config"])
    if expect_config is not None:
        stored, wanted = cfg.to_dict(), expect_config.to_dict()
        for field in sorted(set(stored) | set(wanted)):
            if stored.get(field) != wanted.get(field):
                raise VersionError(
                    f"checkpoint config mismatch on '{field}': "
                    f"{stored.get(field)} != {wanted.get(field)}"
                )
    body = raw[start + head_len :]

    blobs = {}
    for entry in header["manifest"]:
        blob = body[entry["offset"] : entry["offset"] + entry["size"]]
        if len(blob) != entry["size"]:
            raise IntegrityError(f"tensor '{entry['name']}' is truncated")
        if zlib.crc32(blob) != entry["crc32"]:
            raise IntegrityError(f"tensor '{entry['name']}' fails its checksum")
        blobs[entry["name"]] = tvt.load_bytes(blob)

    model = Model(cfg, seed=0, dtype=np.dtype(header["dtype"]))
    for name, p in model.params().items():
        if name not in blobs:
            raise IntegrityError(f"checkpoint is missing tensor '{name}'")
        arr = blobs[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise VersionError(
                f"tensor '{name}' has shape {arr.shape}, expected {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype, copy=False)

    optimizer = None
    if header["optimizer"] is not None:
        optimizer = AdamW(model.params(), AdamHyper(**header["optimizer"]["hyper"]))
        optimizer.state.step = header["optimizer"]["step"]
        for name in optimizer.params:
            for kind, store in (("m", optimizer.state.m), ("v", optimizer.state.v)):
                key = f"opt.{kind}.{name}"
                if key not in blobs:
                    raise IntegrityError(f"checkpoint is missing tensor '{key}'")
                store[name] = blobs[key]
    extra = {
        name[len("extra.") :]: arr
        for name, arr in blobs.items()
        if name.startswith("extra.")
    }
    return CheckpointBundle(
        model=model,
        optimizer=optimizer,
        global_step=header["global_step"],
        extra=extra or None,
        extra_meta=header.get("extra_meta"),
    )
