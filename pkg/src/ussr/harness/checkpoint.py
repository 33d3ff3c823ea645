"""Bit-exact little-endian checkpoint container.

Layout::

    b"USSRCKPT" | u32 version | u32 section count
    per section: u32 name length | name (utf-8) | u64 payload length | payload
    u32 CRC-32 of every preceding byte

Sections ``config``, ``stats`` and ``meta`` hold canonical JSON; every
parameter is a ``param:<name>`` section and every stored segment
representation an ``hhat:<id>`` section, each encoded as
``u32 ndim | u64 dims... | float64 data``.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..featurepipe import FeatureStats
from .config import Config
from .system import USSR

MAGIC = b"USSRCKPT"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _encode_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    return struct.pack(f"<I{a.ndim}Q", a.ndim, *a.shape) + a.tobytes()


def _decode_array(buf: bytes, where: str) -> np.ndarray:
    if len(buf) < 4:
        raise CheckpointError(f"section {where}: truncated array header")
    (ndim,) = struct.unpack_from("<I", buf)
    head = 4 + 8 * ndim
    if len(buf) < head:
        raise CheckpointError(f"section {where}: truncated array header")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 4)
    n = int(np.prod(shape)) if ndim else 1
    if len(buf) != head + 8 * n:
        raise CheckpointError(f"section {where}: expected {n} values, payload size does not match")
    return np.frombuffer(buf, dtype="<f8", offset=head).reshape(shape).astype(np.float64)


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def to_bytes(model: USSR) -> bytes:
    meta = {
        "n_clusters": model.n_clusters,
        "segments": [{"id": s.id, "learnable_u": s.learnable_u, "frozen": s.frozen,
                      "stored": s.h_hat is not None} for s in model.bipartite.segments],
        "segment_dim": model.bipartite.segment_dim,
        "rng": model.rng.bit_generator.state,
        "param_names": list(model.store),
    }
    sections = [("config", model.config.to_json().encode()), ("stats", model.stats.to_json().encode()),
                ("meta", _json(meta))]
    sections += [(f"param:{name}", _encode_array(t.data)) for name, t in model.store.items()]
    sections += [(f"hhat:{s.id}", _encode_array(s.h_hat)) for s in model.bipartite.segments
                 if s.h_hat is not None]
    body = bytearray(MAGIC + struct.pack("<II", VERSION, len(sections)))
    for name, payload in sections:
        raw = name.encode()
        body += struct.pack("<I", len(raw)) + raw + struct.pack("<Q", len(payload)) + payload
    body += struct.pack("<I", zlib.crc32(body))
    return bytes(body)


def from_bytes(buf: bytes) -> USSR:
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic: expected {MAGIC!r}, found {bytes(buf[:len(MAGIC)])!r}")
    if len(buf) < len(MAGIC) + 12:
        raise CheckpointError("truncated checkpoint")
    version, count = struct.unpack_from("<II", buf, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version: expected {VERSION}, found {version}")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointError("checkpoint is truncated or corrupt (checksum mismatch)")

    sections: dict[str, bytes] = {}
    pos, end = len(MAGIC) + 8, len(buf) - 4
    for _ in range(count):
        if pos + 4 > end:
            raise CheckpointError("truncated section table")
        (n,) = struct.unpack_from("<I", buf, pos)
        name = bytes(buf[pos + 4:pos + 4 + n]).decode()
        pos += 4 + n
        (size,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        if pos + size > end:
            raise CheckpointError(f"section {name!r} runs past the end of the file")
        sections[name] = bytes(buf[pos:pos + size])
        pos += size
    if pos != end:
        raise CheckpointError("trailing bytes after the last section")

    try:
        config = Config.from_json(sections["config"].decode())
        stats = FeatureStats.from_json(sections["stats"].decode())
        meta = json.loads(sections["meta"])
    except KeyError as exc:
        raise CheckpointError(f"missing section {exc}") from None

    segs = meta["segments"]
    model = USSR.build(config.replace(segment_dim=meta["segment_dim"]), stats, n_segments=0,
                       n_clusters=meta["n_clusters"])
    for s in segs:
        model.bipartite.add_segment(model.rng, None if s["learnable_u"] else np.zeros(meta["segment_dim"]))
    if sorted(model.store) != sorted(meta["param_names"]):
        raise CheckpointError("parameter layout in checkpoint does not match the rebuilt model")
    # clusters added by expansion sit after the segment parameters; keep the saved order
    ordered = {name: model.store[name] for name in meta["param_names"]}
    model.store.clear()
    model.store.update(ordered)
    arrays = {}
    for name in meta["param_names"]:
        key = f"param:{name}"
        if key not in sections:
            raise CheckpointError(f"missing section {key!r}")
        arrays[name] = _decode_array(sections[key], key)
        if arrays[name].shape != model.store[name].shape:
            raise CheckpointError(f"{key}: shape {arrays[name].shape}, model expects {model.store[name].shape}")
    model.store.load_arrays(arrays)
    for s, desc in zip(segs, model.bipartite.segments):
        desc.frozen = s["frozen"]
        if s["stored"]:
            desc.h_hat = _decode_array(sections[f"hhat:{s['id']}"], f"hhat:{s['id']}")
    model.config = config
    model.rng.bit_generator.state = meta["rng"]
    return model


def save(model: USSR, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path: str | Path) -> USSR:
    return from_bytes(Path(path).read_bytes())
