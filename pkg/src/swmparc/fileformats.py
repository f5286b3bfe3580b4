"""On-disk formats: tractograms, label tables, heatmaps, config files.

Binary formats are little-endian with a 4-byte magic and a u32 version;
coordinates and values are stored as float32. Label tables are plain
CSV so they stay greppable.
"""

import csv
import json
import struct

import numpy as np

from .datasets import NON_SWM
from .errors import (
    BadMagicError,
    FileFormatError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .evaluation import GridSpec, Heatmap
from .geometry import as_streamline

TRACT_MAGIC = b"SWMT"
TRACT_VERSION = 1
HEATMAP_MAGIC = b"SWMH"
HEATMAP_VERSION = 1
NON_SWM_TOKEN = "NON_SWM"


# ---------------------------------------------------------------------------
# tractograms


def write_tractogram(path, streamlines):
    """Magic, version, u64 streamline count; per streamline a u32 point
    count followed by float32 x,y,z triplets."""
    with open(path, "wb") as fh:
        fh.write(TRACT_MAGIC)
        fh.write(struct.pack("<IQ", TRACT_VERSION, len(streamlines)))
        for s in streamlines:
            pts = as_streamline(s)
            fh.write(struct.pack("<I", pts.shape[0]))
            fh.write(np.ascontiguousarray(pts, dtype="<f4").tobytes())


def read_tractogram(path):
    """Returns a list of float64 (p, 3) arrays."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != TRACT_MAGIC:
        raise BadMagicError(f"{path}: not a tractogram file (bad magic)")
    if len(data) < 16:
        raise TruncatedFileError(f"{path}: header incomplete")
    version, count = struct.unpack_from("<IQ", data, 4)
    if version != TRACT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported tractogram version {version}")
    pos = 16
    out = []
    for i in range(count):
        if pos + 4 > len(data):
            raise TruncatedFileError(f"{path}: file ends inside streamline {i}")
        (n_pts,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if n_pts < 2:
            raise FileFormatError(f"{path}: streamline {i} has {n_pts} points")
        nbytes = 12 * n_pts
        if pos + nbytes > len(data):
            raise TruncatedFileError(f"{path}: file ends inside streamline {i}")
        pts = np.frombuffer(data, dtype="<f4", count=3 * n_pts, offset=pos)
        out.append(pts.astype(np.float64).reshape(n_pts, 3))
        pos += nbytes
    if pos != len(data):
        raise FileFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return out


# ---------------------------------------------------------------------------
# label tables


def _label_str(value):
    return NON_SWM_TOKEN if value == NON_SWM else str(int(value))


def write_labels(path, labels, stage_one=None, stage_two=None):
    """index,label rows; NON_SWM is written as a token, not a number.

    With stage_one/stage_two given, two extra columns record the raw
    per-stage outputs (stage_two is blank where stage one already
    discarded the streamline).
    """
    labels = np.asarray(labels, dtype=np.int64)
    extended = stage_one is not None or stage_two is not None
    if extended and (stage_one is None or stage_two is None):
        raise ValueError("extended output needs both stage_one and stage_two")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if extended:
            writer.writerow(["index", "label", "stage_one", "stage_two"])
            for i, value in enumerate(labels):
                s2 = "" if stage_two[i] < 0 else str(int(stage_two[i]))
                writer.writerow([i, _label_str(value), int(stage_one[i]), s2])
        else:
            writer.writerow(["index", "label"])
            for i, value in enumerate(labels):
                writer.writerow([i, _label_str(value)])


def read_labels(path):
    """Read the label column; indices must be 0..N-1 in order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FileFormatError(f"{path}: empty label file") from None
        if len(header) < 2 or header[0] != "index" or header[1] != "label":
            raise FileFormatError(f"{path}: expected 'index,label' header")
        out = []
        for row_num, row in enumerate(reader):
            if len(row) < 2:
                raise FileFormatError(f"{path}: row {row_num} has too few fields")
            try:
                index = int(row[0])
            except ValueError:
                raise FileFormatError(
                    f"{path}: row {row_num} has non-integer index {row[0]!r}"
                ) from None
            if index != row_num:
                raise FileFormatError(
                    f"{path}: index {index} at row {row_num}; expected {row_num}"
                )
            if row[1] == NON_SWM_TOKEN:
                out.append(NON_SWM)
            else:
                try:
                    out.append(int(row[1]))
                except ValueError:
                    raise FileFormatError(
                        f"{path}: row {row_num} has bad label {row[1]!r}"
                    ) from None
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# heatmaps


def write_heatmap(path, heatmap):
    """Magic, version, f32 origin triplet, f32 voxel size, u32 dims
    triplet, then the values in C order as float32."""
    grid = heatmap.grid
    with open(path, "wb") as fh:
        fh.write(HEATMAP_MAGIC)
        fh.write(struct.pack("<I", HEATMAP_VERSION))
        fh.write(np.asarray(grid.origin, dtype="<f4").tobytes())
        fh.write(struct.pack("<f", grid.voxel_size))
        fh.write(struct.pack("<III", *grid.dims))
        fh.write(np.ascontiguousarray(heatmap.values, dtype="<f4").tobytes())


def read_heatmap(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != HEATMAP_MAGIC:
        raise BadMagicError(f"{path}: not a heatmap file (bad magic)")
    header = 4 + 4 + 12 + 4 + 12
    if len(data) < header:
        raise TruncatedFileError(f"{path}: header incomplete")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != HEATMAP_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported heatmap version {version}")
    origin = np.frombuffer(data, dtype="<f4", count=3, offset=8).astype(np.float64)
    (voxel,) = struct.unpack_from("<f", data, 20)
    dims = struct.unpack_from("<III", data, 24)
    count = int(np.prod(dims))
    if len(data) != header + 4 * count:
        raise TruncatedFileError(
            f"{path}: expected {header + 4 * count} bytes, found {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4", count=count, offset=header)
    grid = GridSpec(origin=origin, voxel_size=float(voxel), dims=dims)
    return Heatmap(grid=grid, values=values.astype(np.float64).reshape(dims))


def write_heatmap_csv(path, heatmap):
    """Sparse CSV view: one i,j,k,value row per nonzero voxel."""
    nz = np.argwhere(heatmap.values != 0.0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "k", "value"])
        for i, j, k in nz:
            writer.writerow([i, j, k, repr(float(heatmap.values[i, j, k]))])


# ---------------------------------------------------------------------------
# config files and JSON


def read_config(path):
    """Flat key = value lines; '#' starts a comment, blanks are skipped.

    Values stay strings; the consumer casts them. A later assignment to
    the same key wins.
    """
    out = {}
    with open(path) as fh:
        for line_num, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FileFormatError(
                    f"{path}: line {line_num} is not a key = value assignment"
                )
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise FileFormatError(f"{path}: line {line_num} has an empty key")
            out[key] = value.strip()
    return out


def jsonable(obj):
    """Recursively convert numpy scalars/arrays so json.dumps accepts them."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
