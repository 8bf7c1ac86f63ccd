"""Segment file formats and the on-disk dataset layout.

Supported formats
-----------------
xyz-text  whitespace-separated columns ``x y z [i1 [i2 i3]]``, one point per
          line, ``#`` starts a comment. Carries 0, 1 or 3 intensity channels;
          normals are not persisted in this format.
ply       ascii or binary-little-endian; properties x/y/z (float), intensity
          channels as uint16 named intensity1..3, optional nx/ny/nz floats.
las       versions 1.2-1.4, point record formats 0-3, XYZ + intensity only;
          all other attributes are ignored. The writer emits LAS 1.2 format 0
          with a 1e-6 m coordinate scale so round-trips stay within 1e-6 m.
          A cloud whose intensities are all zero reads back with no channel.

Dataset layout: ``<root>/<species>/<scan_id>__<tree_id>.<ext>`` with one
directory per species label.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cloud import INTENSITY_MAX, SPECIES_LABELS, PointCloud, TreeSegment

FORMATS = ("xyz-text", "ply", "las")

_EXTENSION_FORMATS = {
    ".xyz": "xyz-text",
    ".txt": "xyz-text",
    ".ply": "ply",
    ".las": "las",
}

_SUPPORTED_EXTENSIONS = tuple(_EXTENSION_FORMATS)


class SegmentIOError(ValueError):
    """Malformed or unreadable segment file; message names file and record."""


def format_for_path(path) -> str:
    suffix = Path(path).suffix.lower()
    try:
        return _EXTENSION_FORMATS[suffix]
    except KeyError:
        raise SegmentIOError(f"{path}: unsupported extension {suffix!r}") from None


def _ids_from_stem(stem: str) -> tuple[str, str]:
    # Stems follow "<scan_id>__<tree_id>"; bare stems become the tree id.
    if "__" in stem:
        scan_id, tree_id = stem.split("__", 1)
        return scan_id, tree_id
    return "", stem


def read_segment(path, fmt: str | None = None) -> TreeSegment:
    """Read one segment file into a TreeSegment.

    Species is taken from the parent directory when it names a known label,
    otherwise "unknown"; scan and tree ids are parsed from the file stem.
    """
    path = Path(path)
    fmt = fmt or format_for_path(path)
    if fmt not in FORMATS:
        raise SegmentIOError(f"{path}: unknown format {fmt!r}")
    if not path.is_file():
        raise SegmentIOError(f"{path}: no such file")

    if fmt == "xyz-text":
        cloud = _read_xyz(path)
    elif fmt == "ply":
        cloud = _read_ply(path)
    else:
        cloud = _read_las(path)

    if cloud.n_points == 0:
        raise SegmentIOError(f"{path}: empty point cloud")

    scan_id, tree_id = _ids_from_stem(path.stem)
    parent = path.parent.name
    species = parent if parent in SPECIES_LABELS else "unknown"
    return TreeSegment(tree_id=tree_id, scan_id=scan_id, species=species, cloud=cloud)


def write_segment(segment: TreeSegment, path, fmt: str | None = None,
                  ply_ascii: bool = False) -> None:
    """Write a segment; the format is inferred from the extension by default."""
    path = Path(path)
    fmt = fmt or format_for_path(path)
    if fmt not in FORMATS:
        raise SegmentIOError(f"{path}: unknown format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "xyz-text":
        _write_xyz(segment.cloud, path)
    elif fmt == "ply":
        _write_ply(segment.cloud, path, ascii_mode=ply_ascii)
    else:
        _write_las(segment.cloud, path)


# --- xyz-text ---------------------------------------------------------------

_XYZ_COLUMN_COUNTS = {3: 0, 4: 1, 6: 3}


def _read_xyz(path: Path) -> PointCloud:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # empty input warns; we raise below
            data = np.loadtxt(path, comments="#", dtype=np.float64, ndmin=2)
    except ValueError:
        raise _diagnose_xyz(path) from None
    if data.size == 0:
        raise SegmentIOError(f"{path}: empty point cloud")
    ncols = data.shape[1]
    if ncols not in _XYZ_COLUMN_COUNTS:
        raise SegmentIOError(
            f"{path}: expected 3, 4 or 6 columns, found {ncols}"
        )
    intensity = data[:, 3:] if ncols > 3 else None
    if intensity is not None and intensity.size:
        bad = np.nonzero((intensity < 0) | (intensity > INTENSITY_MAX))[0]
        if bad.size:
            line = _data_line_number(path, int(bad[0]))
            raise SegmentIOError(
                f"{path}: line {line}: intensity outside [0, {INTENSITY_MAX:.0f}]"
            )
    try:
        return PointCloud(xyz=data[:, :3], intensity=intensity)
    except ValueError as exc:
        raise SegmentIOError(f"{path}: {exc}") from None


def _diagnose_xyz(path: Path) -> SegmentIOError:
    """Re-scan a file np.loadtxt rejected to name the offending line."""
    ncols = None
    with open(path, "r") as handle:
        for lineno, raw in enumerate(handle, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            try:
                [float(p) for p in parts]
            except ValueError:
                return SegmentIOError(
                    f"{path}: line {lineno}: malformed record {text!r}"
                )
            if ncols is None:
                ncols = len(parts)
            elif len(parts) != ncols:
                return SegmentIOError(
                    f"{path}: line {lineno}: {len(parts)} columns after "
                    f"{ncols}-column records (mixed channel counts)"
                )
    return SegmentIOError(f"{path}: malformed xyz-text file")


def _data_line_number(path: Path, row: int) -> int:
    """File line number of the row-th non-comment data record."""
    seen = -1
    with open(path, "r") as handle:
        for lineno, raw in enumerate(handle, start=1):
            if raw.split("#", 1)[0].strip():
                seen += 1
                if seen == row:
                    return lineno
    return -1


def _write_xyz(cloud: PointCloud, path: Path) -> None:
    cols = [cloud.xyz]
    fmt = ["%.8f"] * 3
    if cloud.intensity is not None:
        cols.append(cloud.intensity)
        fmt += ["%.17g"] * cloud.channel_count
    np.savetxt(path, np.hstack(cols), fmt=fmt)


# --- PLY --------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _read_ply(path: Path) -> PointCloud:
    with open(path, "rb") as handle:
        magic = handle.readline().strip()
        if magic != b"ply":
            raise SegmentIOError(f"{path}: not a PLY file")
        binary = None
        n_vertices = None
        props: list[tuple[str, str]] = []
        in_vertex = False
        while True:
            raw = handle.readline()
            if not raw:
                raise SegmentIOError(f"{path}: PLY header not terminated")
            tokens = raw.decode("ascii", "replace").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                if tokens[1] == "ascii":
                    binary = False
                elif tokens[1] == "binary_little_endian":
                    binary = True
                else:
                    raise SegmentIOError(
                        f"{path}: unsupported PLY format {tokens[1]!r}"
                    )
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    n_vertices = int(tokens[2])
            elif tokens[0] == "property" and in_vertex:
                if tokens[1] == "list":
                    raise SegmentIOError(
                        f"{path}: list properties on vertices are unsupported"
                    )
                if tokens[1] not in _PLY_TYPES:
                    raise SegmentIOError(
                        f"{path}: unknown PLY property type {tokens[1]!r}"
                    )
                props.append((tokens[2], _PLY_TYPES[tokens[1]]))
            elif tokens[0] == "end_header":
                break
        if binary is None or n_vertices is None:
            raise SegmentIOError(f"{path}: incomplete PLY header")
        names = [name for name, _ in props]
        for needed in ("x", "y", "z"):
            if needed not in names:
                raise SegmentIOError(f"{path}: PLY vertex lacks property {needed!r}")

        if binary:
            dtype = np.dtype([(n, "<" + t) for n, t in props])
            raw = handle.read(dtype.itemsize * n_vertices)
            if len(raw) < dtype.itemsize * n_vertices:
                raise SegmentIOError(f"{path}: truncated PLY vertex data")
            table = np.frombuffer(raw, dtype=dtype, count=n_vertices)
            columns = {n: table[n].astype(np.float64) for n in names}
        else:
            rows = []
            for i in range(n_vertices):
                line = handle.readline()
                if not line:
                    raise SegmentIOError(
                        f"{path}: vertex {i}: unexpected end of file"
                    )
                parts = line.split()
                if len(parts) != len(props):
                    raise SegmentIOError(
                        f"{path}: vertex {i}: expected {len(props)} values, "
                        f"found {len(parts)}"
                    )
                try:
                    rows.append([float(p) for p in parts])
                except ValueError:
                    raise SegmentIOError(
                        f"{path}: vertex {i}: malformed record"
                    ) from None
            table = np.asarray(rows, dtype=np.float64)
            columns = {n: table[:, j] for j, n in enumerate(names)}

    xyz = np.column_stack([columns["x"], columns["y"], columns["z"]])
    channel_names = [n for n in ("intensity1", "intensity2", "intensity3")
                     if n in columns]
    if not channel_names and "intensity" in columns:
        channel_names = ["intensity"]
    if channel_names and len(channel_names) not in (1, 3):
        raise SegmentIOError(
            f"{path}: expected 1 or 3 intensity channels, "
            f"found {len(channel_names)}"
        )
    intensity = (np.column_stack([columns[n] for n in channel_names])
                 if channel_names else None)
    normals = None
    if all(n in columns for n in ("nx", "ny", "nz")):
        normals = np.column_stack([columns["nx"], columns["ny"], columns["nz"]])
    try:
        return PointCloud(xyz=xyz, intensity=intensity, normals=normals)
    except ValueError as exc:
        raise SegmentIOError(f"{path}: {exc}") from None


def _check_uint16_range(cloud: PointCloud, path: Path, what: str) -> None:
    if cloud.intensity is not None and cloud.intensity.size:
        if cloud.intensity.max() > 65535:
            raise SegmentIOError(
                f"{path}: {what} stores intensities as uint16; "
                f"values above 65535 cannot be written (use xyz-text)"
            )


def _write_ply(cloud: PointCloud, path: Path, ascii_mode: bool) -> None:
    _check_uint16_range(cloud, path, "PLY")
    channels = cloud.channel_count
    names = ["x", "y", "z"]
    types = ["float"] * 3
    for c in range(channels):
        names.append(f"intensity{c + 1}")
        types.append("ushort")
    if cloud.normals is not None:
        names += ["nx", "ny", "nz"]
        types += ["float"] * 3

    header = ["ply",
              "format ascii 1.0" if ascii_mode else "format binary_little_endian 1.0",
              f"element vertex {cloud.n_points}"]
    header += [f"property {t} {n}" for t, n in zip(types, names)]
    header.append("end_header")

    if ascii_mode:
        cols = [cloud.xyz]
        fmt = ["%.8f"] * 3
        if channels:
            cols.append(cloud.intensity)
            fmt += ["%d"] * channels
        if cloud.normals is not None:
            cols.append(cloud.normals)
            fmt += ["%.8f"] * 3
        with open(path, "w") as handle:
            handle.write("\n".join(header) + "\n")
            np.savetxt(handle, np.hstack(cols), fmt=fmt)
    else:
        np_types = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
        np_types += [(f"intensity{c + 1}", "<u2") for c in range(channels)]
        if cloud.normals is not None:
            np_types += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
        table = np.empty(cloud.n_points, dtype=np.dtype(np_types))
        table["x"], table["y"], table["z"] = cloud.xyz.T
        for c in range(channels):
            table[f"intensity{c + 1}"] = np.floor(
                cloud.intensity[:, c] + 0.5).astype(np.uint16)
        if cloud.normals is not None:
            table["nx"], table["ny"], table["nz"] = cloud.normals.T
        with open(path, "wb") as handle:
            handle.write(("\n".join(header) + "\n").encode("ascii"))
            handle.write(table.tobytes())


# --- LAS --------------------------------------------------------------------

# Point record formats 0-3 all start with X/Y/Z int32 + intensity uint16.
_LAS_MIN_RECORD_LENGTH = {0: 20, 1: 28, 2: 26, 3: 34}
_LAS_WRITE_SCALE = 1e-6  # keeps int32 quantization inside the 1e-6 m tolerance


def _read_las(path: Path) -> PointCloud:
    with open(path, "rb") as handle:
        data = handle.read()
    if len(data) < 227 or data[:4] != b"LASF":
        raise SegmentIOError(f"{path}: not a LAS file")
    major, minor = data[24], data[25]
    if major != 1 or minor not in (2, 3, 4):
        raise SegmentIOError(f"{path}: unsupported LAS version {major}.{minor}")
    offset_to_points, = struct.unpack_from("<I", data, 96)
    point_format = data[104]
    if point_format & 0x80:
        raise SegmentIOError(f"{path}: LAZ compression is unsupported")
    point_format &= 0x3F
    if point_format not in _LAS_MIN_RECORD_LENGTH:
        raise SegmentIOError(
            f"{path}: unsupported point record format {point_format}"
        )
    record_length, = struct.unpack_from("<H", data, 105)
    if record_length < _LAS_MIN_RECORD_LENGTH[point_format]:
        raise SegmentIOError(
            f"{path}: record length {record_length} below format minimum"
        )
    n_points, = struct.unpack_from("<I", data, 107)
    if n_points == 0 and minor == 4:
        n_points, = struct.unpack_from("<Q", data, 247)
    scales = struct.unpack_from("<3d", data, 131)
    offsets = struct.unpack_from("<3d", data, 155)

    end = offset_to_points + n_points * record_length
    if len(data) < end:
        raise SegmentIOError(f"{path}: truncated LAS point data")
    dtype = np.dtype({
        "names": ["X", "Y", "Z", "intensity"],
        "formats": ["<i4", "<i4", "<i4", "<u2"],
        "offsets": [0, 4, 8, 12],
        "itemsize": record_length,
    })
    records = np.frombuffer(data[offset_to_points:end], dtype=dtype)
    xyz = np.column_stack([
        records["X"] * scales[0] + offsets[0],
        records["Y"] * scales[1] + offsets[1],
        records["Z"] * scales[2] + offsets[2],
    ])
    raw_intensity = records["intensity"].astype(np.float64)
    intensity = raw_intensity[:, None] if np.any(raw_intensity) else None
    return PointCloud(xyz=xyz, intensity=intensity)


def _write_las(cloud: PointCloud, path: Path) -> None:
    if cloud.channel_count == 3:
        raise SegmentIOError(
            f"{path}: LAS point records carry a single intensity; "
            f"write 3-channel clouds as PLY or xyz-text"
        )
    _check_uint16_range(cloud, path, "LAS")
    lo = cloud.xyz.min(axis=0)
    hi = cloud.xyz.max(axis=0)
    offset = (lo + hi) / 2.0
    if ((hi - lo) / _LAS_WRITE_SCALE).max() > 2**31 - 2:
        raise SegmentIOError(
            f"{path}: coordinate span too large for the LAS writer scale"
        )
    scaled = np.floor((cloud.xyz - offset) / _LAS_WRITE_SCALE + 0.5).astype(np.int64)

    n = cloud.n_points
    header = struct.pack(
        "<4sHH16sBB32s32sHHHIIBHI5I3d3d6d",
        b"LASF", 0, 0, b"\0" * 16, 1, 2,
        b"treeproj".ljust(32, b"\0"), b"treeproj".ljust(32, b"\0"),
        0, 0,            # creation day/year: fixed for byte-identical re-runs
        227, 227, 0,     # header size, offset to points, VLR count
        0, 20, n,        # point format 0, record length, legacy count
        n, 0, 0, 0, 0,   # by-return counts
        _LAS_WRITE_SCALE, _LAS_WRITE_SCALE, _LAS_WRITE_SCALE,
        offset[0], offset[1], offset[2],
        hi[0], lo[0], hi[1], lo[1], hi[2], lo[2],
    )
    records = np.zeros(n, dtype=np.dtype([
        ("X", "<i4"), ("Y", "<i4"), ("Z", "<i4"), ("intensity", "<u2"),
        ("flags", "u1"), ("classification", "u1"), ("scan_angle", "i1"),
        ("user_data", "u1"), ("source_id", "<u2"),
    ]))
    records["X"], records["Y"], records["Z"] = scaled.T.astype(np.int32)
    if cloud.channel_count == 1:
        records["intensity"] = np.floor(
            cloud.intensity[:, 0] + 0.5).astype(np.uint16)
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(records.tobytes())


# --- dataset manifest --------------------------------------------------------

SPLIT_TAGS = ("train", "test", "unassigned")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    tree_id: str
    scan_id: str
    species: str
    split: str = "unassigned"

    def __post_init__(self):
        if self.species not in SPECIES_LABELS:
            raise ValueError(f"unknown species label {self.species!r}")
        if self.split not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {self.split!r}")

    @property
    def key(self) -> tuple[str, str]:
        return (self.tree_id, self.scan_id)

    def with_split(self, split: str) -> "ManifestEntry":
        return replace(self, split=split)


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        seen = set()
        for entry in entries:
            if entry.key in seen:
                raise ValueError(
                    f"duplicate segment id {entry.tree_id!r} in scan "
                    f"{entry.scan_id!r}"
                )
            seen.add(entry.key)
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def subset(self, split: str) -> tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if e.split == split)


def scan_manifest(root) -> DatasetManifest:
    """Build a manifest from a ``<root>/<species>/<scan>__<tree>.<ext>`` tree."""
    root = Path(root)
    entries = []
    if not root.is_dir():
        raise SegmentIOError(f"{root}: not a directory")
    for child in sorted(root.iterdir()):
        if not child.is_dir():
            continue
        if child.name not in SPECIES_LABELS:
            raise SegmentIOError(
                f"{child}: directory does not name a known species"
            )
        for path in sorted(child.iterdir()):
            if path.suffix.lower() not in _SUPPORTED_EXTENSIONS:
                continue
            scan_id, tree_id = _ids_from_stem(path.stem)
            entries.append(ManifestEntry(
                path=str(path), tree_id=tree_id, scan_id=scan_id,
                species=child.name,
            ))
    entries.sort(key=lambda e: (e.species, e.scan_id, e.tree_id))
    try:
        return DatasetManifest(entries=tuple(entries))
    except ValueError as exc:
        raise SegmentIOError(f"{root}: {exc}") from None


_MANIFEST_HEADER = ["path", "tree_id", "scan_id", "species", "split"]


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_MANIFEST_HEADER)
        for e in manifest.entries:
            writer.writerow([e.path, e.tree_id, e.scan_id, e.species, e.split])


def read_manifest(path, check_paths: bool = True) -> DatasetManifest:
    entries = []
    with open(path, "r", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != _MANIFEST_HEADER:
            raise SegmentIOError(f"{path}: unexpected manifest header {header}")
        for row in reader:
            if len(row) != 5:
                raise SegmentIOError(f"{path}: malformed manifest row {row}")
            entries.append(ManifestEntry(*row))
    if check_paths:
        missing = [e.path for e in entries if not Path(e.path).is_file()]
        if missing:
            raise SegmentIOError(
                f"{path}: {len(missing)} manifest paths unresolvable, "
                f"first: {missing[0]}"
            )
    return DatasetManifest(entries=tuple(entries))


def segments_with_multiple_scans(manifest: DatasetManifest) -> set[str]:
    """Tree ids captured by more than one scan."""
    scans: dict[str, set[str]] = {}
    for e in manifest.entries:
        scans.setdefault(e.tree_id, set()).add(e.scan_id)
    return {tree for tree, scan_ids in scans.items() if len(scan_ids) > 1}
