"""On-disk formats: binary photon streams, CSV curves and atomic writes.

Stream file layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"PHOTSTRM"
    8       4     format version (uint32, currently 1)
    12      4     reserved, zero
    16      8     duration in ps (uint64)
    24      8     event count (uint64)
    32      8*n   timestamps in ps (uint64), sorted

The header is the stream's metadata; a file without a complete header, with
a foreign magic or a count that disagrees with the payload is rejected.
"""
from __future__ import annotations

import csv
import io
import os
import struct
import tempfile

import numpy as np

from .data import CoincidenceHistogram, G2Curve, PhotonStream

MAGIC = b"PHOTSTRM"
VERSION = 1
HEADER = struct.Struct("<8sIIQQ")
assert HEADER.size == 32


class FormatError(ValueError):
    """File content does not follow the documented format."""


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        os.chmod(tmp, 0o644)  # mkstemp creates 0600
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def stream_bytes(stream: PhotonStream) -> bytes:
    head = HEADER.pack(MAGIC, VERSION, 0, stream.duration, len(stream))
    return head + stream.timestamps.astype("<u8").tobytes()


def write_stream(path, stream: PhotonStream) -> None:
    atomic_write(path, stream_bytes(stream))


def parse_stream(buf: bytes, label: str = "") -> PhotonStream:
    if len(buf) < HEADER.size:
        raise FormatError(f"{label or 'stream'}: missing or truncated {HEADER.size}-byte header")
    magic, version, _, duration, count = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{label or 'stream'}: not a photon stream file (bad magic {magic!r})")
    if version != VERSION:
        raise FormatError(f"{label or 'stream'}: unsupported format version {version}")
    if len(buf) != HEADER.size + 8 * count:
        raise FormatError(f"{label or 'stream'}: header announces {count} events, "
                          f"payload holds {(len(buf) - HEADER.size) / 8:g}")
    ts = np.frombuffer(buf, dtype="<u8", count=count, offset=HEADER.size)
    if count and int(ts.max()) >= 2 ** 63:
        raise FormatError(f"{label or 'stream'}: timestamp out of range")
    try:
        return PhotonStream(ts.astype(np.int64), int(duration), label)
    except ValueError as exc:
        raise FormatError(f"{label or 'stream'}: {exc}") from None


def read_stream(path) -> PhotonStream:
    with open(path, "rb") as fh:
        buf = fh.read()
    return parse_stream(buf, os.path.basename(os.fspath(path)))


# --- CSV -------------------------------------------------------------------------

CURVE_COLUMNS = ("tau_ns", "counts", "C_N", "sigma")
CORRECTED_COLUMNS = ("g2_corrected", "sigma_corrected")


def curve_csv(hist: CoincidenceHistogram, raw: G2Curve, corrected: G2Curve | None = None) -> str:
    """Histogram and normalized curve; floats written with full round-trip precision."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    cols = CURVE_COLUMNS + (CORRECTED_COLUMNS if corrected is not None else ())
    w.writerow(cols)
    for i in range(hist.counts.size):
        row = [repr(float(raw.delays[i])), str(int(hist.counts[i])),
               repr(float(raw.values[i])), repr(float(raw.sigma[i]))]
        if corrected is not None:
            row += [repr(float(corrected.values[i])), repr(float(corrected.sigma[i]))]
        w.writerow(row)
    return out.getvalue()


def read_curve_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0][:4]) != CURVE_COLUMNS:
        raise FormatError(f"{path}: expected columns {', '.join(CURVE_COLUMNS)}")
    head = rows[0]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(head):
        raise FormatError(f"{path}: ragged or empty table")
    return {name: data[:, j] for j, name in enumerate(head)}
