"""RGB-D samples, manifests, LR simulation, cropping and synthetic scenes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .imageio import read_depth, read_rgb, write_image
from .resize import bicubic_resize
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class Sample:
    rgb: Tensor  # [1,3,sH,sW] in [0,1]
    lr_depth: Tensor  # [1,1,H,W], normalised
    hr_depth: Tensor  # [1,1,sH,sW], normalised
    depth_min: float
    depth_max: float
    id: str = ""

    @property
    def anchors(self) -> tuple[float, float]:
        return self.depth_min, self.depth_max


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    rgb: Path
    depth: Path
    lr_depth: Optional[Path] = None


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)
    split: str = "train"
    scale: int = 4

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @classmethod
    def read(cls, path, check_files: bool = True) -> "DatasetManifest":
        """Parse ``id<TAB>rgb<TAB>depth[<TAB>lr_depth]`` lines.

        Paths are relative to the manifest's directory. Lines starting with
        ``#`` are comments; a ``# split=... scale=...`` comment sets metadata.
        """
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"{path}: cannot read manifest ({exc})") from exc
        root = path.parent
        meta = {"split": "train", "scale": "4"}
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise DataError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields, got {len(parts)}")
            files = [root / p for p in parts[1:]]
            if check_files:
                for f in files:
                    if not f.is_file():
                        raise DataError(f"{path}:{lineno}: sample {parts[0]!r} references missing file {f}")
            entries.append(ManifestEntry(parts[0], *files))
        entries.sort(key=lambda e: e.id)
        return cls(root=root, entries=entries, split=meta["split"], scale=int(meta["scale"]))

    def write(self, path) -> None:
        path = Path(path)
        lines = [f"# split={self.split} scale={self.scale}"]
        for e in sorted(self.entries, key=lambda e: e.id):
            cols = [e.id] + [_relpath(p, path.parent) for p in (e.rgb, e.depth, e.lr_depth) if p is not None]
            lines.append("\t".join(cols))
        try:
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as exc:
            raise DataError(f"{path}: cannot write manifest ({exc})") from exc


def _relpath(p: Path, base: Path) -> str:
    try:
        return Path(p).resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        return Path(p).resolve().as_posix()


# --------------------------------------------------------------------------
# normalisation
# --------------------------------------------------------------------------


def normalize(depth: np.ndarray, anchors: Optional[tuple[float, float]] = None):
    """Min-max map depth to [0,1]. Returns ``(normalised, (min, max))``."""
    d = np.asarray(depth, dtype=np.float64)
    lo, hi = (float(d.min()), float(d.max())) if anchors is None else anchors
    if hi <= lo:
        raise DataError(f"zero depth range (min = max = {lo})")
    return ((d - lo) / (hi - lo)).astype(np.float32), (lo, hi)


def denormalize(depth, anchors: tuple[float, float]):
    """Inverse of :func:`normalize`; computed in float64."""
    lo, hi = anchors
    arr = depth.data if isinstance(depth, Tensor) else np.asarray(depth)
    out = arr.astype(np.float64) * (hi - lo) + lo
    return Tensor(out) if isinstance(depth, Tensor) else out


# --------------------------------------------------------------------------
# sample construction
# --------------------------------------------------------------------------


def simulate_lr(hr_depth: Tensor, s: int) -> Tensor:
    """Bicubic downsampling by an integer factor."""
    h, w = hr_depth.shape[-2:]
    if s < 1 or h % s or w % s:
        raise DataError(f"HR size {h}x{w} is not divisible by scale {s}")
    return bicubic_resize(hr_depth, h // s, w // s)


def load_sample(entry: ManifestEntry, scale: int) -> Sample:
    rgb8 = read_rgb(entry.rgb)
    depth16 = read_depth(entry.depth)
    if rgb8.shape[:2] != depth16.shape:
        raise DataError(f"sample {entry.id!r}: RGB is {rgb8.shape[:2]} but depth is {depth16.shape}")
    try:
        hr, anchors = normalize(depth16)
    except DataError as exc:
        raise DataError(f"sample {entry.id!r} ({entry.depth}): {exc}") from None
    rgb = Tensor((rgb8.astype(np.float32) / 255.0).transpose(2, 0, 1)[None])
    hr_t = Tensor(hr[None, None])
    if entry.lr_depth is not None:
        lr, _ = normalize(read_depth(entry.lr_depth), anchors)
        lr_t = Tensor(lr[None, None])
    else:
        lr_t = simulate_lr(hr_t, scale)
    return Sample(rgb=rgb, lr_depth=lr_t, hr_depth=hr_t, depth_min=anchors[0], depth_max=anchors[1], id=entry.id)


def upsample_lr(sample: Sample) -> Tensor:
    """Bicubic-upsample the LR depth onto the HR/RGB grid."""
    h, w = sample.hr_depth.shape[-2:]
    return bicubic_resize(sample.lr_depth, h, w)


def random_crop(sample: Sample, patch: int = 256, rng: Optional[np.random.Generator] = None, scale: Optional[int] = None) -> Sample:
    """Aligned random crop; HR offsets are multiples of the scale factor."""
    if rng is None:
        raise ValueError("random_crop needs a seeded generator")
    hh, hw = sample.hr_depth.shape[-2:]
    lh, lw = sample.lr_depth.shape[-2:]
    s = scale if scale is not None else hh // lh
    if lh * s != hh or lw * s != hw:
        raise DataError(f"sample {sample.id!r}: LR {lh}x{lw} is not HR {hh}x{hw} / {s}")
    if patch > min(hh, hw):
        raise DataError(f"patch {patch} larger than image {hh}x{hw} (sample {sample.id!r})")
    if patch % s:
        raise DataError(f"patch {patch} not divisible by scale {s}")
    y = int(rng.integers(0, (hh - patch) // s + 1)) * s
    x = int(rng.integers(0, (hw - patch) // s + 1)) * s
    lp = patch // s

    def cut(t: Tensor, y0: int, x0: int, size: int) -> Tensor:
        return Tensor(t.data[..., y0 : y0 + size, x0 : x0 + size].copy())

    return Sample(
        rgb=cut(sample.rgb, y, x, patch),
        lr_depth=cut(sample.lr_depth, y // s, x // s, lp),
        hr_depth=cut(sample.hr_depth, y, x, patch),
        depth_min=sample.depth_min,
        depth_max=sample.depth_max,
        id=sample.id,
    )


# --------------------------------------------------------------------------
# synthetic scenes
# --------------------------------------------------------------------------


def _shape_mask(rng: np.random.Generator, size: int, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    lo, hi = size // 8, size // 2
    h, w = rng.integers(lo, hi + 1, size=2)
    cy, cx = rng.integers(0, size, size=2)
    if rng.random() < 0.5:
        return (np.abs(yy - cy) <= h / 2) & (np.abs(xx - cx) <= w / 2)
    return ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0


def synth_scene(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """One scene: (rgb uint8 [S,S,3], depth uint16 [S,S]).

    Objects are painted far to near so nearer ones occlude. Depth is
    piecewise constant; RGB edges coincide with depth edges, and stripes
    inside some objects are RGB-only texture with no depth counterpart.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    depth = np.full((size, size), int(rng.integers(5000, 8000)), dtype=np.int64)
    rgb = np.empty((size, size, 3), dtype=np.float64)
    rgb[:] = rng.uniform(40, 215, size=3)
    n_obj = int(rng.integers(3, 7))
    levels = np.sort(rng.choice(np.arange(500, 4800, 50), size=n_obj, replace=False))[::-1]
    for level in levels:
        mask = _shape_mask(rng, size, yy, xx)
        depth[mask] = level
        color = rng.uniform(20, 235, size=3)
        if rng.random() < 0.6:
            theta = rng.uniform(0, np.pi)
            period = rng.uniform(3.0, 9.0)
            phase = (xx * np.cos(theta) + yy * np.sin(theta)) / period
            stripe = np.where(np.floor(phase) % 2 == 0, 1.0, -1.0)
            amp = rng.uniform(25, 60)
            tex = np.clip(color[None, None, :] + amp * stripe[..., None], 0, 255)
        else:
            tex = np.broadcast_to(color, (size, size, 3))
        rgb[mask] = tex[mask]
    return np.round(rgb).astype(np.uint8), depth.astype(np.uint16)


def synth_dataset(count: int, size: int, seed: int, out_dir, scale: int = 4) -> DatasetManifest:
    """Write ``count`` synthetic scenes plus ``manifest.txt`` into ``out_dir``."""
    if size % 16:
        raise DataError(f"scene size must be divisible by 16, got {size}")
    if count < 0:
        raise DataError(f"count must be >= 0, got {count}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{out}: cannot create directory ({exc})") from exc
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(count):
        rgb, depth = synth_scene(rng, size)
        # at least the background plus one visible object
        while len(np.unique(depth)) < 2:
            rgb, depth = synth_scene(rng, size)
        sid = f"scene_{i:04d}"
        rgb_path, depth_path = out / f"{sid}_rgb.png", out / f"{sid}_depth.png"
        write_image(rgb_path, rgb)
        write_image(depth_path, depth)
        entries.append(ManifestEntry(sid, rgb_path, depth_path))
    manifest = DatasetManifest(root=out, entries=entries, split="train", scale=scale)
    manifest.write(out / "manifest.txt")
    log.info("wrote %d synthetic scenes to %s", count, out)
    return manifest
