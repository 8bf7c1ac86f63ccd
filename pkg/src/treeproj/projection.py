"""Orthographic projection images of tree segments.

Clouds are rotated about z and projected onto the xz plane (image x = cloud
x, image row 0 = max z). Three colorings are supported:

WOP  binary silhouette, occupied pixels white; never smoothed.
OP   intensity coloring: raw values scaled from [0, 65536] to [0, 255];
     selected channel c feeds RGB slot c, a single selected channel is
     replicated into all three slots (greyscale).
NV   normal coloring: each normal component mapped from [-1, 1] to [0, 255]
     into (R, G, B) = (nx, ny, nz).

OP and NV images are smoothed with a normalized 3x3 Gaussian kernel
(sigma 0.85, zero padding) before quantization when smoothing is enabled.
Bytes are produced by round-half-up everywhere.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .cloud import INTENSITY_MAX, PointCloud, TreeSegment
from .io import DatasetManifest, SegmentIOError, read_segment
from .normals import NormalParams, estimate_normals, orient_outward
from .preprocess import TrunkEstimate, estimate_trunk

COLORINGS = ("wop", "op", "nv")
CONFLICT_POLICIES = ("max-y", "last-write", "max-intensity")

#: Rotation angles used for the training images (degrees).
TRAINING_ANGLES = (0.0, 72.0, 144.0, 216.0, 288.0)

#: Raster side margin relative to the cloud extent (2 % total growth).
FRAME_MARGIN = 1.02

GAUSSIAN_SIGMA = 0.85


def inference_angles(count: int = 25) -> tuple[float, ...]:
    """Uniform z-rotation angles starting at 0 degrees."""
    return tuple(i * 360.0 / count for i in range(count))


@dataclass(frozen=True)
class RenderConfig:
    image_size: int = 1024
    angles_deg: tuple[float, ...] = TRAINING_ANGLES
    slice_offset: float = 0.7
    coloring: str = "wop"
    channels: tuple[int, ...] = (1,)
    smoothing: bool = True

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        angles = tuple(float(a) for a in self.angles_deg)
        if any(a < 0.0 or a >= 360.0 for a in angles):
            raise ValueError("angles must lie in [0, 360)")
        object.__setattr__(self, "angles_deg", angles)
        coloring = self.coloring.lower()
        if coloring not in COLORINGS:
            raise ValueError(f"coloring must be one of {COLORINGS}")
        object.__setattr__(self, "coloring", coloring)
        channels = tuple(int(c) for c in self.channels)
        if coloring == "op":
            if not channels or any(c not in (1, 2, 3) for c in channels):
                raise ValueError("OP channel selection must be a subset of {1,2,3}")
            if len(set(channels)) != len(channels):
                raise ValueError("OP channel selection must not repeat channels")
        object.__setattr__(self, "channels", channels)


@dataclass(frozen=True)
class ImageMeta:
    tree_id: str = ""
    scan_id: str = ""
    angle_deg: float = 0.0
    sliced: bool = False
    coloring: str = "wop"
    channels: tuple[int, ...] = ()


@dataclass(frozen=True)
class ProjectionImage:
    pixels: np.ndarray              # (S, S, 3) uint8
    meta: ImageMeta
    occupied: int | None = None     # pre-smoothing occupied pixel count

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class RasterFrame:
    """Square world window (meters) that the pixel grid spans."""

    center_x: float
    center_z: float
    side: float

    @classmethod
    def from_cloud(cls, cloud: PointCloud) -> "RasterFrame":
        if cloud.n_points == 0:
            raise ValueError("cannot frame an empty cloud")
        x, z = cloud.xyz[:, 0], cloud.xyz[:, 2]
        extent = max(x.max() - x.min(), z.max() - z.min())
        side = extent * FRAME_MARGIN if extent > 0 else 1.0
        return cls(center_x=float(x.max() + x.min()) / 2.0,
                   center_z=float(z.max() + z.min()) / 2.0,
                   side=side)

    def pixel_size(self, image_size: int) -> float:
        return self.side / image_size


def rotate_z(cloud: PointCloud, angle_deg: float) -> PointCloud:
    """Right-handed rotation about the z axis; normals rotate along."""
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    normals = cloud.normals
    if normals is not None:
        normals = normals @ rot.T
    return PointCloud(xyz=cloud.xyz @ rot.T, intensity=cloud.intensity,
                      normals=normals)


def rotate_trunk(trunk: TrunkEstimate, angle_deg: float) -> TrunkEstimate:
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    return TrunkEstimate(t_x=c * trunk.t_x - s * trunk.t_y,
                         t_y=s * trunk.t_x + c * trunk.t_y)


def slice_points(cloud: PointCloud, trunk: TrunkEstimate,
                 offset: float) -> PointCloud:
    """Keep points with y <= t_y + offset (trunk given in the rotated frame)."""
    return cloud.select(cloud.xyz[:, 1] <= trunk.t_y + offset)


def quantize_bytes(values: np.ndarray) -> np.ndarray:
    """Round half-up to uint8, clipping into [0, 255]."""
    return np.floor(np.clip(values, 0.0, 255.0) + 0.5).astype(np.uint8)


def gaussian_kernel_3x3(sigma: float = GAUSSIAN_SIGMA) -> np.ndarray:
    offsets = np.array([-1.0, 0.0, 1.0])
    weights = np.exp(-offsets ** 2 / (2.0 * sigma * sigma))
    kernel = np.outer(weights, weights)
    return kernel / kernel.sum()


def smooth_channels(channels: np.ndarray,
                    sigma: float = GAUSSIAN_SIGMA) -> np.ndarray:
    """Convolve each channel of an (H, W, C) float image, zero padded."""
    kernel = gaussian_kernel_3x3(sigma)
    out = np.empty_like(channels, dtype=np.float64)
    for c in range(channels.shape[2]):
        out[:, :, c] = ndimage.convolve(channels[:, :, c].astype(np.float64),
                                        kernel, mode="constant", cval=0.0)
    return out


def _pixel_coords(cloud: PointCloud, frame: RasterFrame,
                  size: int) -> tuple[np.ndarray, np.ndarray]:
    u = (cloud.xyz[:, 0] - frame.center_x) / frame.side + 0.5
    v = 0.5 - (cloud.xyz[:, 2] - frame.center_z) / frame.side
    cols = np.clip(np.floor(u * size), 0, size - 1).astype(np.intp)
    rows = np.clip(np.floor(v * size), 0, size - 1).astype(np.intp)
    return rows, cols


def _winners(flat: np.ndarray, cloud: PointCloud, cfg: RenderConfig,
             conflict: str) -> np.ndarray:
    """Index of the winning point per occupied pixel."""
    if conflict == "max-y":
        key = cloud.xyz[:, 1]
    elif conflict == "last-write":
        key = np.arange(len(flat), dtype=np.float64)
    elif conflict == "max-intensity":
        if cloud.intensity is None:
            raise ValueError("max-intensity conflict policy requires intensities")
        cols = [c - 1 for c in (cfg.channels or (1,))]
        key = cloud.intensity[:, cols].sum(axis=1)
    else:
        raise ValueError(f"conflict policy must be one of {CONFLICT_POLICIES}")
    order = np.lexsort((key, flat))
    flat_sorted = flat[order]
    last = np.r_[flat_sorted[1:] != flat_sorted[:-1], True]
    return order[last]


def rasterize(cloud: PointCloud, cfg: RenderConfig,
              frame: RasterFrame | None = None,
              meta: ImageMeta | None = None,
              conflict: str = "max-y") -> ProjectionImage:
    """Project a cloud into one image.

    `frame` defaults to the cloud's own square bounding window; sliced
    renders pass the frame of the full cloud so both images stay aligned.
    When several points land in one pixel the winner is the point with the
    greatest y (closest to the viewer at +y) under the default policy.
    """
    if cloud.n_points == 0:
        raise ValueError("cannot rasterize an empty cloud")
    coloring = cfg.coloring
    if coloring == "op":
        if cloud.intensity is None:
            raise ValueError("OP coloring requires intensities")
        if max(cfg.channels) > cloud.channel_count:
            raise ValueError(
                f"OP channels {cfg.channels} unavailable with "
                f"{cloud.channel_count} intensity channel(s)"
            )
    if coloring == "nv" and cloud.normals is None:
        raise ValueError("NV coloring requires normals")

    frame = frame or RasterFrame.from_cloud(cloud)
    size = cfg.image_size
    rows, cols = _pixel_coords(cloud, frame, size)
    flat = rows * size + cols

    image = np.zeros((size, size, 3), dtype=np.float64)
    if coloring == "wop":
        image[rows, cols] = 255.0
        occupied = int(np.unique(flat).size)
    else:
        win = _winners(flat, cloud, cfg, conflict)
        occupied = int(win.size)
        wr, wc = rows[win], cols[win]
        if coloring == "op":
            values = cloud.intensity[win][:, [c - 1 for c in cfg.channels]]
            values = values / INTENSITY_MAX * 255.0
            if len(cfg.channels) == 1:
                image[wr, wc] = values                 # broadcast to grey
            else:
                for j, channel in enumerate(cfg.channels):
                    image[wr, wc, channel - 1] = values[:, j]
        else:
            image[wr, wc] = (cloud.normals[win] + 1.0) / 2.0 * 255.0
        if cfg.smoothing:
            image = smooth_channels(image)

    if meta is None:
        meta = ImageMeta(coloring=coloring,
                         channels=cfg.channels if coloring == "op" else ())
    return ProjectionImage(pixels=quantize_bytes(image), meta=meta,
                           occupied=occupied)


def bilinear_resize(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resampling with half-pixel-center alignment (float in/out)."""
    src = np.asarray(values, dtype=np.float64)
    src_h, src_w = src.shape[:2]
    ys = (np.arange(height) + 0.5) * (src_h / height) - 0.5
    xs = (np.arange(width) + 0.5) * (src_w / width) - 0.5
    ys = np.clip(ys, 0.0, src_h - 1.0)
    xs = np.clip(xs, 0.0, src_w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    if src.ndim == 3:
        wy = wy[:, :, None]
        wx = wx[:, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def resize_bilinear(image: ProjectionImage, target: int) -> ProjectionImage:
    """Resize to target x target; bytes round half-up."""
    if target < 8:
        raise ValueError("target size must be at least 8")
    resized = bilinear_resize(image.pixels.astype(np.float64), target, target)
    return ProjectionImage(pixels=quantize_bytes(resized), meta=image.meta,
                           occupied=None)


def empty_pixel_ratio(image: ProjectionImage) -> float:
    """Fraction of pixels that received no projected point (pre-smoothing).

    Uses the occupancy recorded at rasterization time; images loaded from
    disk fall back to counting all-zero pixels.
    """
    total = image.size * image.size
    if image.occupied is not None:
        return 1.0 - image.occupied / total
    empty = int(np.all(image.pixels == 0, axis=2).sum())
    return empty / total


def pixel_ground_size(cloud: PointCloud, cfg: RenderConfig) -> float:
    """Edge length, in meters, that one pixel covers for this cloud."""
    return RasterFrame.from_cloud(cloud).pixel_size(cfg.image_size)


def render_tree(segment: TreeSegment, cfg: RenderConfig,
                trunk: TrunkEstimate | None = None) -> list[ProjectionImage]:
    """Render one full and one sliced image per configured angle.

    The trunk estimate (computed from the unrotated cloud unless given) is
    rotated alongside the cloud; the sliced render shares the full render's
    frame so the image pair stays pixel aligned.
    """
    trunk = trunk if trunk is not None else estimate_trunk(segment)
    images = []
    for angle in cfg.angles_deg:
        rotated = rotate_z(segment.cloud, angle)
        rotated_trunk = rotate_trunk(trunk, angle)
        frame = RasterFrame.from_cloud(rotated)
        base = ImageMeta(tree_id=segment.tree_id, scan_id=segment.scan_id,
                         angle_deg=angle, sliced=False, coloring=cfg.coloring,
                         channels=cfg.channels if cfg.coloring == "op" else ())
        images.append(rasterize(rotated, cfg, frame=frame, meta=base))
        sliced = slice_points(rotated, rotated_trunk, cfg.slice_offset)
        if sliced.n_points == 0:
            raise ValueError(
                f"slice offset {cfg.slice_offset} removed every point of "
                f"tree {segment.tree_id!r}"
            )
        images.append(rasterize(sliced, cfg, frame=frame,
                                meta=replace(base, sliced=True)))
    return images


# --- image files and dataset emission -----------------------------------------


def image_filename(meta: ImageMeta) -> str:
    for field in (meta.scan_id, meta.tree_id):
        if "__" in field:
            raise ValueError(f"ids must not contain '__': {field!r}")
    kind = "slice" if meta.sliced else "full"
    return (f"{meta.scan_id}__{meta.tree_id}__a{int(round(meta.angle_deg)):03d}"
            f"__{kind}.png")


def parse_image_filename(name: str) -> ImageMeta:
    stem = Path(name).name
    if stem.endswith(".png"):
        stem = stem[:-4]
    parts = stem.split("__")
    if len(parts) != 4 or not parts[2].startswith("a") or \
            parts[3] not in ("full", "slice"):
        raise ValueError(f"file name does not follow the dataset grammar: {name!r}")
    try:
        angle = float(int(parts[2][1:]))
    except ValueError:
        raise ValueError(f"bad angle field in file name: {name!r}") from None
    return ImageMeta(tree_id=parts[1], scan_id=parts[0], angle_deg=angle,
                     sliced=parts[3] == "slice")


def save_png(image: ProjectionImage, path) -> None:
    Image.fromarray(image.pixels, mode="RGB").save(path, format="PNG",
                                                   compress_level=6)


def load_png(path) -> ProjectionImage:
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    try:
        meta = parse_image_filename(Path(path).name)
    except ValueError:
        meta = ImageMeta()
    return ProjectionImage(pixels=pixels, meta=meta, occupied=None)


def load_image_dir(split_root) -> list[tuple[ProjectionImage, str]]:
    """Load `<split_root>/<species>/*.png` as (image, species) pairs."""
    split_root = Path(split_root)
    out = []
    for species_dir in sorted(p for p in split_root.iterdir() if p.is_dir()):
        for path in sorted(species_dir.glob("*.png")):
            out.append((load_png(path), species_dir.name))
    return out


@dataclass
class EmitSummary:
    files_written: int = 0
    segments_rendered: int = 0
    images_per_species: dict = None
    skipped: list = None

    def __post_init__(self):
        self.images_per_species = self.images_per_species or {}
        self.skipped = self.skipped or []


def _render_entry(entry, cfg: RenderConfig, out_root: Path,
                  normal_params: NormalParams | None):
    segment = read_segment(entry.path)
    segment = TreeSegment(tree_id=entry.tree_id, scan_id=entry.scan_id,
                          species=entry.species, cloud=segment.cloud)
    if cfg.coloring == "nv" and segment.cloud.normals is None:
        if normal_params is None:
            raise ValueError(
                f"{entry.path}: NV rendering needs stored normals or "
                f"normal_params to estimate them"
            )
        trunk = estimate_trunk(segment)
        segment = orient_outward(estimate_normals(segment, normal_params), trunk)
    images = render_tree(segment, cfg)
    target = out_root / entry.split / entry.species
    target.mkdir(parents=True, exist_ok=True)
    for image in images:
        save_png(image, target / image_filename(image.meta))
    return len(images)


def emit_dataset(manifest: DatasetManifest, cfg: RenderConfig, out_root,
                 jobs: int = 1,
                 normal_params: NormalParams | None = None) -> EmitSummary:
    """Render every manifest entry into the on-disk image dataset.

    Layout: ``<out_root>/<split>/<species>/<scan>__<tree>__a<angle>__<kind>.png``.
    Unrenderable segments are skipped and reported in the summary. Output
    bytes are independent of `jobs`.
    """
    out_root = Path(out_root)
    summary = EmitSummary()

    def work(entry):
        try:
            return entry, _render_entry(entry, cfg, out_root, normal_params), None
        except (SegmentIOError, ValueError, OSError) as exc:
            return entry, 0, str(exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, manifest.entries))
    else:
        results = [work(entry) for entry in manifest.entries]

    for entry, count, error in results:
        if error is not None:
            summary.skipped.append((entry.path, error))
            continue
        summary.segments_rendered += 1
        summary.files_written += count
        per = summary.images_per_species
        per[entry.species] = per.get(entry.species, 0) + count
    return summary
