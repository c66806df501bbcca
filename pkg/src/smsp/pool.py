"""Persistent pool of pruned-mask records.

A pool is a directory: `index.bin` plus one `<record_id>.rec` file per
record. Every file ends with a 64-bit BLAKE2b checksum of everything
before it; the index is replaced atomically (write temp, rename) so a
failed save never corrupts the previous state.

Record file layout (little-endian):
    magic b"MSKR" | version u16
    | arch_id u16-len + utf8 | n u32 | n_labels u16 | pruning_ratio f32
    | metadata u32-len + utf8 json
    | labels i32 * n_labels | scores f32 * n | checksum u64

Index file layout (little-endian):
    magic b"MSKI" | version u16
    | arch count u16, each: arch_id u16-len + utf8, spec u32-len + utf8 json
    | record count u32, each: record_id u16-len, arch_id u16-len,
      task_size u16, pruning_ratio f32, filename u16-len, checksum u64
    | checksum u64
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nets import Architecture

__all__ = [
    "PoolError",
    "ChecksumError",
    "PrunedRecord",
    "Pool",
    "save_record",
    "load_record",
    "query",
    "compute_record_id",
]

RECORD_MAGIC = b"MSKR"
INDEX_MAGIC = b"MSKI"
FORMAT_VERSION = 1


class PoolError(Exception):
    """Malformed pool state or invalid record operation."""


class ChecksumError(PoolError):
    """Stored bytes do not match their checksum."""


def _digest(buf: bytes) -> bytes:
    return hashlib.blake2b(buf, digest_size=8).digest()


@dataclass
class PrunedRecord:
    """One pool entry: which classes a task used and the mask it learned.

    Scores are full length; pruned units hold exactly 0. Metadata carries
    the training knobs needed to reproduce the record (threshold, l1_weight,
    iterations, seed, achieved_ratio, created_at, task_id).
    """

    record_id: str
    arch_id: str
    class_labels: tuple
    scores: np.ndarray
    pruning_ratio: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, np.float32)
        self.class_labels = tuple(int(c) for c in self.class_labels)

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def task_size(self) -> int:
        return len(self.class_labels)

    def retained_units(self) -> np.ndarray:
        return np.flatnonzero(self.scores != 0)

    def validate(self, n_expected: int | None = None) -> None:
        if self.scores.ndim != 1 or self.n == 0:
            raise PoolError("scores must be a non-empty vector")
        if not np.isfinite(self.scores).all():
            raise PoolError("scores must be finite")
        if n_expected is not None and self.n != n_expected:
            raise PoolError(f"score length {self.n} does not match architecture ({n_expected})")
        labels = self.class_labels
        if any(labels[i] >= labels[i + 1] for i in range(len(labels) - 1)):
            raise PoolError("class labels must be strictly increasing")
        if not 0.0 <= self.pruning_ratio < 1.0:
            raise PoolError("pruning ratio must lie in [0, 1)")
        achieved = self.metadata.get("achieved_ratio")
        if achieved is not None:
            zeros = int((self.scores == 0).sum())
            if zeros / self.n < float(achieved) - 1.0 / self.n - 1e-9:
                raise PoolError("zero-score count is below the recorded achieved ratio")


def compute_record_id(arch_id, class_labels, pruning_ratio, scores, metadata) -> str:
    """Content hash; excludes created_at so reruns reproduce the same id."""
    meta = {k: v for k, v in sorted(metadata.items()) if k != "created_at"}
    h = hashlib.blake2b(digest_size=8)
    h.update(arch_id.encode())
    h.update(np.asarray(class_labels, np.int32).tobytes())
    h.update(struct.pack("<f", pruning_ratio))
    h.update(np.asarray(scores, np.float32).tobytes())
    h.update(json.dumps(meta, sort_keys=True).encode())
    return h.hexdigest()


def _encode_record(rec: PrunedRecord) -> bytes:
    arch_b = rec.arch_id.encode()
    meta_b = json.dumps(rec.metadata, sort_keys=True).encode()
    parts = [
        RECORD_MAGIC,
        struct.pack("<H", FORMAT_VERSION),
        struct.pack("<H", len(arch_b)),
        arch_b,
        struct.pack("<I", rec.n),
        struct.pack("<H", rec.task_size),
        struct.pack("<f", rec.pruning_ratio),
        struct.pack("<I", len(meta_b)),
        meta_b,
        np.asarray(rec.class_labels, "<i4").tobytes(),
        rec.scores.astype("<f4").tobytes(),
    ]
    body = b"".join(parts)
    return body + _digest(body)


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise PoolError(f"{self.what} is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def _decode_record(buf: bytes, record_id: str) -> PrunedRecord:
    if len(buf) < 8:
        raise PoolError("record file is truncated")
    body, stored = buf[:-8], buf[-8:]
    if _digest(body) != stored:
        raise ChecksumError(f"checksum mismatch for record {record_id}")
    r = _Reader(body, f"record {record_id}")
    if r.take(4) != RECORD_MAGIC:
        raise PoolError(f"bad record magic for {record_id}")
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise PoolError(f"unsupported record version {version}")
    (alen,) = r.unpack("<H")
    arch_id = r.take(alen).decode()
    (n,) = r.unpack("<I")
    (nlab,) = r.unpack("<H")
    (ratio,) = r.unpack("<f")
    (mlen,) = r.unpack("<I")
    metadata = json.loads(r.take(mlen).decode())
    labels = np.frombuffer(r.take(4 * nlab), "<i4")
    scores = np.frombuffer(r.take(4 * n), "<f4").copy()
    if r.pos != len(body):
        raise PoolError(f"trailing bytes in record {record_id}")
    return PrunedRecord(record_id, arch_id, tuple(labels.tolist()), scores, float(ratio), metadata)


@dataclass
class _IndexEntry:
    record_id: str
    arch_id: str
    task_size: int
    pruning_ratio: float
    filename: str
    checksum: bytes


class Pool:
    """Directory-backed record store. Many readers, one writer at a time."""

    def __init__(self, path, create: bool = True):
        self.path = Path(path)
        if create:
            self.path.mkdir(parents=True, exist_ok=True)
        elif not self.path.is_dir():
            raise PoolError(f"pool directory {self.path} does not exist")
        self.architectures: dict[str, Architecture] = {}
        self._entries: dict[str, _IndexEntry] = {}
        self._cache: dict[str, PrunedRecord] = {}
        index = self.path / "index.bin"
        if index.exists():
            self._read_index(index.read_bytes())

    # ------------------------------------------------------------- index

    def _read_index(self, buf: bytes) -> None:
        if len(buf) < 8 or _digest(buf[:-8]) != buf[-8:]:
            raise ChecksumError("pool index failed its checksum")
        r = _Reader(buf[:-8], "pool index")
        if r.take(4) != INDEX_MAGIC:
            raise PoolError("bad pool index magic")
        (version,) = r.unpack("<H")
        if version != FORMAT_VERSION:
            raise PoolError(f"unsupported pool version {version}")
        (narch,) = r.unpack("<H")
        for _ in range(narch):
            (alen,) = r.unpack("<H")
            arch_id = r.take(alen).decode()
            (slen,) = r.unpack("<I")
            self.architectures[arch_id] = Architecture.from_dict(json.loads(r.take(slen).decode()))
        (nrec,) = r.unpack("<I")
        for _ in range(nrec):
            (ilen,) = r.unpack("<H")
            rid = r.take(ilen).decode()
            (alen,) = r.unpack("<H")
            arch_id = r.take(alen).decode()
            (task_size,) = r.unpack("<H")
            (ratio,) = r.unpack("<f")
            (flen,) = r.unpack("<H")
            fname = r.take(flen).decode()
            checksum = r.take(8)
            self._entries[rid] = _IndexEntry(rid, arch_id, task_size, float(ratio), fname, checksum)

    def _write_index(self) -> None:
        parts = [INDEX_MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<H", len(self.architectures))]
        for arch_id in sorted(self.architectures):
            spec = json.dumps(self.architectures[arch_id].to_dict(), sort_keys=True).encode()
            aid = arch_id.encode()
            parts += [struct.pack("<H", len(aid)), aid, struct.pack("<I", len(spec)), spec]
        parts.append(struct.pack("<I", len(self._entries)))
        for rid in sorted(self._entries):
            e = self._entries[rid]
            rid_b, aid_b, fn_b = e.record_id.encode(), e.arch_id.encode(), e.filename.encode()
            parts += [
                struct.pack("<H", len(rid_b)), rid_b,
                struct.pack("<H", len(aid_b)), aid_b,
                struct.pack("<H", e.task_size),
                struct.pack("<f", e.pruning_ratio),
                struct.pack("<H", len(fn_b)), fn_b,
                e.checksum,
            ]
        body = b"".join(parts)
        tmp = self.path / "index.bin.tmp"
        tmp.write_bytes(body + _digest(body))
        os.replace(tmp, self.path / "index.bin")

    # ----------------------------------------------------------- records

    def register_architecture(self, arch: Architecture) -> None:
        known = self.architectures.get(arch.arch_id)
        if known is not None and known.to_dict() != arch.to_dict():
            raise PoolError(f"architecture {arch.arch_id} already registered with a different spec")
        if known is None:
            self.architectures[arch.arch_id] = arch
            self._write_index()

    def save_record(self, record: PrunedRecord, architecture: Architecture | None = None) -> str:
        if architecture is not None:
            self.register_architecture(architecture)
        arch = self.architectures.get(record.arch_id)
        if arch is None:
            raise PoolError(f"unknown architecture {record.arch_id}; register it first")
        record.validate(n_expected=arch.n_prunable)
        if not record.record_id:
            record.record_id = compute_record_id(
                record.arch_id, record.class_labels, record.pruning_ratio, record.scores, record.metadata
            )
        blob = _encode_record(record)
        fname = f"{record.record_id}.rec"
        tmp = self.path / (fname + ".tmp")
        tmp.write_bytes(blob)
        os.replace(tmp, self.path / fname)
        self._entries[record.record_id] = _IndexEntry(
            record.record_id, record.arch_id, record.task_size,
            float(np.float32(record.pruning_ratio)), fname, blob[-8:],
        )
        self._write_index()
        self._cache[record.record_id] = record
        return record.record_id

    def load_record(self, record_id: str, cache: bool = True) -> PrunedRecord:
        if cache and record_id in self._cache:
            return self._cache[record_id]
        entry = self._entries.get(record_id)
        if entry is None:
            raise PoolError(f"unknown record id {record_id}")
        blob = (self.path / entry.filename).read_bytes()
        if blob[-8:] != entry.checksum:
            raise ChecksumError(f"record {record_id} does not match its indexed checksum")
        rec = _decode_record(blob, record_id)
        arch = self.architectures.get(rec.arch_id)
        rec.validate(n_expected=arch.n_prunable if arch else None)
        if cache:
            self._cache[record_id] = rec
        return rec

    def query(self, arch_id=None, task_size=None, pruning_ratio=None) -> list[str]:
        """Record ids matching every given filter, sorted by id."""
        out = []
        for rid in sorted(self._entries):
            e = self._entries[rid]
            if arch_id is not None and e.arch_id != arch_id:
                continue
            if task_size is not None and e.task_size != task_size:
                continue
            if pruning_ratio is not None and abs(e.pruning_ratio - pruning_ratio) > 1e-6:
                continue
            out.append(rid)
        return out

    def load_many(self, record_ids) -> list[PrunedRecord]:
        return [self.load_record(rid) for rid in record_ids]

    @property
    def record_ids(self) -> list[str]:
        return sorted(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


# Functional wrappers over a throwaway Pool handle.


def save_record(pool_path, record: PrunedRecord, architecture: Architecture | None = None) -> str:
    return Pool(pool_path).save_record(record, architecture)


def load_record(pool_path, record_id: str) -> PrunedRecord:
    return Pool(pool_path, create=False).load_record(record_id)


def query(pool_path, arch_id=None, task_size=None, pruning_ratio=None) -> list[str]:
    return Pool(pool_path, create=False).query(arch_id, task_size, pruning_ratio)
