"""On-disk formats and lazily loaded fingerprint sources.

SPNF layout (all integers little-endian)::

    b"SPNF" | version:u16 | d:u64 | n:u64
    n columns of d float32 values (column-major)
    n ids, each as len:u32 followed by UTF-8 bytes
"""
from __future__ import annotations

import contextlib
import csv
import json
import struct
import threading
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, IdMismatch
from .fingerprint import FingerprintMatrix

MAGIC = b"SPNF"
VERSION = 1
_HEADER = struct.Struct("<4sHQQ")
_IDLEN = struct.Struct("<I")

UNCLUSTERED = "unclustered"


def write_spnf(path, fm: FingerprintMatrix) -> None:
    path = Path(path)
    cols = np.asarray(fm.X, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, fm.d, fm.n))
        fh.write(np.asfortranarray(cols).tobytes(order="F"))
        for ident in fm.ids:
            raw = ident.encode("utf-8")
            fh.write(_IDLEN.pack(len(raw)))
            fh.write(raw)


def _read_header(fh):
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise FormatError("truncated SPNF header")
    magic, version, d, n = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported SPNF version {version}")
    return d, n


def _read_ids(fh, n):
    ids = []
    for _ in range(n):
        head = fh.read(_IDLEN.size)
        if len(head) != _IDLEN.size:
            raise FormatError("truncated id table")
        (length,) = _IDLEN.unpack(head)
        raw = fh.read(length)
        if len(raw) != length:
            raise FormatError("truncated id string")
        ids.append(raw.decode("utf-8"))
    if fh.read(1):
        raise FormatError("trailing bytes after id table")
    return tuple(ids)


def read_spnf(path) -> FingerprintMatrix:
    """Load a whole SPNF file into memory."""
    with open(path, "rb") as fh:
        d, n = _read_header(fh)
        nbytes = 4 * d * n
        buf = fh.read(nbytes)
        if len(buf) != nbytes:
            raise FormatError("truncated fingerprint data")
        X = np.frombuffer(buf, dtype="<f4").reshape((d, n), order="F")
        ids = _read_ids(fh, n)
    return FingerprintMatrix(X.astype(np.float64), ids)


class ResidencyCounter:
    """Tracks how many raw fingerprints each thread holds at once."""

    def __init__(self):
        self._lock = threading.Lock()
        self._current = defaultdict(int)
        self.peak_per_worker = 0
        self.total_loaded = 0

    def acquire(self, m: int) -> None:
        tid = threading.get_ident()
        with self._lock:
            self._current[tid] += m
            self.total_loaded += m
            self.peak_per_worker = max(self.peak_per_worker, self._current[tid])

    def release(self, m: int) -> None:
        tid = threading.get_ident()
        with self._lock:
            self._current[tid] -= m

    @property
    def resident(self) -> int:
        with self._lock:
            return sum(self._current.values())


class FingerprintSource:
    """Random access to fingerprint columns with residency accounting.

    Use :meth:`loaded` as a context manager; the returned array is only
    guaranteed valid inside the ``with`` block.
    """

    ids: tuple
    d: int

    def __init__(self):
        self.counter = ResidencyCounter()
        self._index = None

    @property
    def n(self) -> int:
        return len(self.ids)

    def index_of(self, ident: str) -> int:
        if self._index is None:
            self._index = {k: i for i, k in enumerate(self.ids)}
        return self._index[ident]

    def _fetch(self, cols: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    @contextlib.contextmanager
    def loaded(self, cols: Sequence[int]):
        cols = list(cols)
        self.counter.acquire(len(cols))
        try:
            yield self._fetch(cols)
        finally:
            self.counter.release(len(cols))


class MatrixSource(FingerprintSource):
    def __init__(self, fm: FingerprintMatrix):
        super().__init__()
        self._fm = fm
        self.ids = fm.ids
        self.d = fm.d

    def _fetch(self, cols):
        return self._fm.X[:, cols]


class SpnfSource(FingerprintSource):
    """Memory-mapped SPNF file; columns are copied out on demand."""

    def __init__(self, path):
        super().__init__()
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            self.d, n = _read_header(fh)
            fh.seek(_HEADER.size + 4 * self.d * n)
            self.ids = _read_ids(fh, n)
        self._map = np.memmap(
            self.path, dtype="<f4", mode="r", offset=_HEADER.size, shape=(self.d, n), order="F"
        )

    def _fetch(self, cols):
        return np.asarray(self._map[:, cols], dtype=np.float64)


def as_source(data) -> FingerprintSource:
    if isinstance(data, FingerprintSource):
        return data
    if isinstance(data, FingerprintMatrix):
        return MatrixSource(data)
    if isinstance(data, (str, Path)):
        return SpnfSource(data)
    raise TypeError(f"cannot read fingerprints from {type(data).__name__}")


def write_labels(path, ids: Iterable[str], labels: Iterable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for ident, lab in zip(ids, labels):
            w.writerow([ident, lab])


def read_labels(path) -> dict:
    """Read an ``id,label`` table into an insertion-ordered dict."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'id,label'")
            if row[0] in out:
                raise FormatError(f"{path}:{lineno}: duplicate id {row[0]!r}")
            out[row[0]] = row[1]
    return out


def write_result(path, result) -> None:
    """Serialize a ClusteringResult as JSON (ids keep input order)."""
    record = {
        "num_clusters": int(result.num_clusters),
        "labels": {
            ident: (UNCLUSTERED if lab < 0 else int(lab))
            for ident, lab in zip(result.ids, result.labels)
        },
    }
    Path(path).write_text(json.dumps(record, indent=1) + "\n", encoding="utf-8")


def read_result(path):
    from .spectral import ClusteringResult

    record = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        items = record["labels"]
        ids = tuple(items)
        labels = [-1 if v == UNCLUSTERED else int(v) for v in items.values()]
        return ClusteringResult(ids, np.array(labels, dtype=np.int64), int(record["num_clusters"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed result record") from exc


def align_truth(ids: Sequence[str], truth: dict) -> list:
    """Return truth labels in ``ids`` order; the id sets must coincide."""
    if set(ids) != set(truth) or len(ids) != len(truth):
        missing = sorted(set(ids) ^ set(truth))[:5]
        raise IdMismatch(f"prediction and truth id sets differ (e.g. {missing})")
    return [truth[i] for i in ids]


def load_image(path):
    """Read an 8-bit grayscale or RGB raster as a RawImage."""
    from PIL import Image

    from .fingerprint import RawImage

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    if arr.dtype != np.uint8:
        raise FormatError(f"{path}: not an 8-bit image")
    return RawImage.from_uint8(arr)
