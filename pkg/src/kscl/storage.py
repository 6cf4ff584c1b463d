"""Binary checkpoint and dataset formats, plus CSV export.

All integers are little-endian uint32/int64, all reals little-endian float64,
and every file ends with a CRC-32 of the bytes before it.

Checkpoint (``KSCL1``)::

    b"KSCL1"
    u32 meta_len, meta_len bytes of UTF-8 JSON (sorted keys; momentum, step, config echo)
    3 parameter sections, in order: query encoder, key encoder, SGD momentum buffers
        u32 n_layers (0 for an empty optimizer state)
        per layer: u32 rows, u32 cols, rows*cols f64 weight (row-major), rows f64 bias
    u32 crc32

Dataset (``KSCLD1``)::

    b"KSCLD1"
    u32 n_instances, u32 feature_dim, u32 num_classes
    n i64 ids, n i64 labels, n*feature_dim f64 features (row-major)
    u32 crc32
"""

from __future__ import annotations

import csv
import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .encoder import EncoderPair, MlpParams, SgdState
from .errors import CheckpointCorrupt, DatasetCorrupt

CHECKPOINT_MAGIC = b"KSCL1"
DATASET_MAGIC = b"KSCLD1"


@dataclass
class Checkpoint:
    pair: EncoderPair
    optimizer: SgdState = field(default_factory=SgdState)
    step: int = 0
    meta: dict = field(default_factory=dict)


def _pack_layers(layers) -> bytes:
    out = [struct.pack("<I", len(layers))]
    for w, b in layers:
        out.append(struct.pack("<II", *w.shape))
        out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes, error: type[Exception]):
        self.buf = buf
        self.pos = 0
        self.error = error

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise self.error("unexpected end of file")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype).astype(dtype[1:])

    def layers(self) -> list:
        layers = []
        for _ in range(self.u32()):
            rows, cols = self.u32(), self.u32()
            w = self.array("<f8", rows * cols).reshape(rows, cols)
            b = self.array("<f8", rows)
            layers.append((w, b))
        return layers


def _verify_crc(raw: bytes, error: type[Exception]) -> bytes:
    if len(raw) < 4:
        raise error("file too short")
    body, tail = raw[:-4], raw[-4:]
    if struct.unpack("<I", tail)[0] != zlib.crc32(body):
        raise error("checksum mismatch")
    return body


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    meta = dict(ckpt.meta, momentum=ckpt.pair.momentum, step=ckpt.step)
    meta_raw = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(
        [
            CHECKPOINT_MAGIC,
            struct.pack("<I", len(meta_raw)),
            meta_raw,
            _pack_layers(ckpt.pair.query.layers),
            _pack_layers(ckpt.pair.key.layers),
            _pack_layers(ckpt.optimizer.buffers),
        ]
    )
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(ckpt))
    return path


def parse_checkpoint(raw: bytes) -> Checkpoint:
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointCorrupt("bad magic: not a KSCL1 checkpoint")
    r = _Reader(_verify_crc(raw, CheckpointCorrupt), CheckpointCorrupt)
    r.take(len(CHECKPOINT_MAGIC))
    try:
        meta = json.loads(r.take(r.u32()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorrupt(f"unreadable metadata: {exc}") from None
    query, key, buffers = r.layers(), r.layers(), r.layers()
    if r.pos != len(r.buf):
        raise CheckpointCorrupt("trailing bytes after optimizer section")
    try:
        q, k = MlpParams(query), MlpParams(key)
    except ValueError as exc:
        raise CheckpointCorrupt(f"inconsistent layer shapes: {exc}") from None
    if not query or q.shapes != k.shapes:
        raise CheckpointCorrupt("query and key encoders differ in shape")
    if buffers and [w.shape for w, _ in buffers] != q.shapes:
        raise CheckpointCorrupt("optimizer state does not match encoder shapes")
    momentum = meta.pop("momentum", None)
    step = meta.pop("step", None)
    if not isinstance(momentum, (int, float)) or not isinstance(step, int):
        raise CheckpointCorrupt("metadata lacks momentum/step")
    return Checkpoint(EncoderPair(q, k, float(momentum)), SgdState(buffers), step, meta)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointCorrupt(f"cannot read checkpoint {path}: {exc}") from None
    return parse_checkpoint(raw)


def dataset_bytes(ds: Dataset) -> bytes:
    n, f = ds.features.shape
    body = b"".join(
        [
            DATASET_MAGIC,
            struct.pack("<III", n, f, ds.num_classes),
            np.ascontiguousarray(ds.ids, dtype="<i8").tobytes(),
            np.ascontiguousarray(ds.labels, dtype="<i8").tobytes(),
            np.ascontiguousarray(ds.features, dtype="<f8").tobytes(),
        ]
    )
    return body + struct.pack("<I", zlib.crc32(body))


def save_dataset(path: str | Path, ds: Dataset) -> Path:
    path = Path(path)
    path.write_bytes(dataset_bytes(ds))
    return path


def load_dataset(path: str | Path) -> Dataset:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetCorrupt(f"cannot read dataset {path}: {exc}") from None
    if not raw.startswith(DATASET_MAGIC):
        raise DatasetCorrupt("bad magic: not a KSCLD1 dataset")
    r = _Reader(_verify_crc(raw, DatasetCorrupt), DatasetCorrupt)
    r.take(len(DATASET_MAGIC))
    n, f, c = r.u32(), r.u32(), r.u32()
    ids = r.array("<i8", n)
    labels = r.array("<i8", n)
    features = r.array("<f8", n * f).reshape(n, f)
    if r.pos != len(r.buf):
        raise DatasetCorrupt("trailing bytes after feature block")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise DatasetCorrupt("label outside [0, num_classes)")
    return Dataset(ids, features, labels, c)


def dataset_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label"] + [f"f{j}" for j in range(ds.feature_dim)])
    for i in range(len(ds)):
        w.writerow([int(ds.ids[i]), int(ds.labels[i])] + [repr(float(x)) for x in ds.features[i]])
    return buf.getvalue()


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    return path


def write_csv(path: str | Path, header: list[str], rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path
