"""Volume container file format.

A ``.bvol`` file is a minimal self-describing container:

    bytes 0..5   magic ``b"BVOL1\\n"``
    bytes 6..13  little-endian uint64 header length ``H``
    next H bytes UTF-8 JSON header: shape ``[C, Z, Y, X]``, spacing,
                 origin, dtype (always ``"<f4"``)
    remainder    raw little-endian float32 voxel data, C order

Reading standard medical volume formats (NIfTI etc.) is an optional import
path isolated behind :func:`load_standard_volume`; it requires the optional
``nibabel`` dependency and is the only place that touches it.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .volume import Volume3D

MAGIC = b"BVOL1\n"


def save_volume(vol: Volume3D, path) -> Path:
    """Write a volume to a ``.bvol`` container file."""
    path = Path(path)
    header = json.dumps(
        {
            "shape": list(vol.data.shape),
            "spacing": list(vol.spacing),
            "origin": list(vol.origin),
            "dtype": "<f4",
        }
    ).encode("utf-8")
    payload = vol.data.astype("<f4").tobytes(order="C")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)
    tmp.replace(path)
    return path


def load_volume(path) -> Volume3D:
    """Read a volume from a ``.bvol`` container file."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path} is not a volume container (bad magic {magic!r})")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("dtype") != "<f4":
            raise DataError(f"{path} has unsupported dtype {header.get('dtype')!r}")
        shape = tuple(int(n) for n in header["shape"])
        count = int(np.prod(shape))
        raw = fh.read(count * 4)
    if len(raw) != count * 4:
        raise DataError(f"{path} is truncated: expected {count * 4} data bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return Volume3D(data, tuple(header["spacing"]), tuple(header["origin"]))


def load_standard_volume(path) -> Volume3D:
    """Import a standard medical volume file (e.g. NIfTI) as a Volume3D.

    The file's array is reordered from the usual ``(x, y, z)`` layout to
    this package's ``[z, y, x]`` convention and its zooms become the
    spacing. Orientation matrices beyond axis-aligned spacing are ignored.
    """
    try:
        import nibabel as nib
    except ImportError as exc:
        raise DataError(
            "reading standard medical volume formats requires the optional "
            "'nibabel' dependency (pip install nibabel)"
        ) from exc
    img = nib.load(str(path))
    arr = np.asanyarray(img.dataobj).astype(np.float32)
    if arr.ndim == 4:  # (x, y, z, c) -> (c, z, y, x)
        arr = arr.transpose(3, 2, 1, 0)
    elif arr.ndim == 3:
        arr = arr.transpose(2, 1, 0)
    else:
        raise DataError(f"{path} has unsupported dimensionality {arr.ndim}")
    zooms = img.header.get_zooms()[:3]
    spacing = (float(zooms[2]), float(zooms[1]), float(zooms[0]))
    return Volume3D(arr, spacing)
