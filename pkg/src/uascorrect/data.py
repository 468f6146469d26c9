"""Patch preparation: sliding windows, bilinear resize, synthetic shadow/glint
degradation, paired datasets, stratified folds, and stitching back to a raster."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import CapacityError, ConfigError, DataError, ShapeError
from .raster import DEFAULT_BAND_NAMES, MultibandRaster, load_raster, save_raster

CATEGORIES = ("shadow", "glint", "both")
DEFAULT_COUNTS = {"shadow": 52, "glint": 49, "both": 15}
WINDOW = 200
MODEL_SIZE = 128
MANIFEST_COLUMNS = ("pair_id", "category", "row", "col", "fold", "degraded_path", "clean_path")


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "little")


# --------------------------------------------------------------------------- scene


# per-band reflectance of the scene's surface classes: blue, green, red, red edge, NIR
_WATER = np.array([0.055, 0.075, 0.045, 0.030, 0.012])
_TURBID = np.array([0.020, 0.035, 0.040, 0.025, 0.010])
_VEGETATION = np.array([0.035, 0.085, 0.045, 0.280, 0.460])
_SOIL = np.array([0.110, 0.150, 0.190, 0.230, 0.270])


def _smooth_field(rng: np.random.Generator, shape: tuple[int, int], sigma: float) -> np.ndarray:
    f = gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    f -= f.mean()
    return f / (np.abs(f).max() + 1e-12)


def make_scene(height: int = 1200, width: int = 1200, seed: int = 0) -> MultibandRaster:
    """Synthetic clean 5-band reflectance scene: a pond with turbidity gradients
    surrounded by a vegetated and bare-soil bank."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy, cx = (height - 1) / 2, (width - 1) / 2
    radial = np.sqrt(((yy - cy) / (0.5 * height)) ** 2 + ((xx - cx) / (0.5 * width)) ** 2)
    shore = _smooth_field(rng, (height, width), 0.08 * min(height, width))
    water = gaussian_filter((radial + 0.25 * shore < 0.82).astype(np.float64), 3.0)
    turbidity = 0.5 + 0.5 * _smooth_field(rng, (height, width), 0.05 * min(height, width))
    veg_share = np.clip(0.5 + _smooth_field(rng, (height, width), 0.04 * min(height, width)), 0, 1)
    texture = _smooth_field(rng, (height, width), 2.0)

    bands = []
    for b in range(5):
        w_ref = _WATER[b] + _TURBID[b] * turbidity
        l_ref = veg_share * _VEGETATION[b] + (1 - veg_share) * _SOIL[b]
        l_ref = l_ref * (1.0 + 0.08 * texture)
        bands.append(water * w_ref + (1 - water) * l_ref)
    data = np.stack(bands) + rng.normal(0.0, 0.001, (5, height, width))
    return MultibandRaster(np.clip(data, 0.0, None).astype(np.float32), DEFAULT_BAND_NAMES)


# --------------------------------------------------------------------------- patches


@dataclass
class Patch:
    row: int
    col: int
    data: np.ndarray


def window_offsets(height: int, width: int, window: int, stride: int) -> list[tuple[int, int]]:
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if height < window or width < window:
        raise ShapeError(f"raster {height}x{width} is smaller than the {window}px window")
    rows = range(0, height - window + 1, stride)
    cols = range(0, width - window + 1, stride)
    return [(r, c) for r in rows for c in cols]


def extract_patches(raster: MultibandRaster, window: int = WINDOW, stride: int = WINDOW) -> list[Patch]:
    """Full windows in row-major order; partial windows at the edges are skipped."""
    return [
        Patch(r, c, raster.data[:, r:r + window, c:c + window].copy())
        for r, c in window_offsets(raster.height, raster.width, window, stride)
    ]


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Corner-aligned linear interpolation weights, shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    if n_out == 1 or n_in == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] += frac
    return m


def resize(data: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    """Bilinear resize of the last two axes with corner-aligned sampling."""
    width = height if width is None else width
    data = np.asarray(data)
    my = _interp_matrix(data.shape[-2], height)
    mx = _interp_matrix(data.shape[-1], width)
    out = np.einsum("ij,...jk,lk->...il", my, data.astype(np.float64), mx, optimize=True)
    return out.astype(np.float32)


def resize_patch(patch: np.ndarray, size: int = MODEL_SIZE, window: int = WINDOW) -> np.ndarray:
    patch = np.asarray(patch)
    if patch.ndim != 3 or patch.shape[1:] != (window, window):
        raise ShapeError(f"expected a [bands, {window}, {window}] patch, got {patch.shape}")
    return resize(patch, size)


# --------------------------------------------------------------------------- degradation


@dataclass(frozen=True)
class ShadowSpec:
    """Parallel darkening seams. ``angle_deg`` is the seam normal's direction;
    ``offset`` moves the seam group along that normal from the image center."""

    angle_deg: float = 30.0
    seam_width: float = 40.0
    attenuation: float = 0.5
    edge_ramp: float = 8.0
    seam_count: int = 1
    seam_spacing: float = 80.0
    offset: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.attenuation <= 1.0:
            raise ConfigError(f"shadow attenuation must be in (0, 1], got {self.attenuation}")
        if self.seam_width < 0 or self.edge_ramp < 0 or self.seam_count < 1:
            raise ConfigError("seam width/ramp must be >= 0 and seam_count >= 1")


@dataclass(frozen=True)
class GlintSpec:
    """Elliptical additive blobs with Gaussian falloff from each blob center."""

    count: int = 2
    radius_min: float = 12.0
    radius_max: float = 35.0
    brightness: float = 0.6
    sigma: float = 12.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.brightness <= 1.0:
            raise ConfigError(f"glint brightness must be in [0, 1], got {self.brightness}")
        if self.count < 0 or not 0 < self.radius_min <= self.radius_max or self.sigma <= 0:
            raise ConfigError("glint needs count >= 0, 0 < radius_min <= radius_max, sigma > 0")


@dataclass(frozen=True)
class DegradeSpec:
    shadow: ShadowSpec | None = None
    glint: GlintSpec | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> "DegradeSpec":
        shadow = raw.get("shadow")
        glint = raw.get("glint")
        return cls(
            shadow=ShadowSpec(**shadow) if shadow else None,
            glint=GlintSpec(**glint) if glint else None,
            seed=int(raw.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "shadow": asdict(self.shadow) if self.shadow else None,
            "glint": asdict(self.glint) if self.glint else None,
            "seed": self.seed,
        }


def shadow_factor(height: int, width: int, spec: ShadowSpec) -> np.ndarray:
    """Multiplicative map: ``attenuation`` on seam cores, 1 outside, linear ramps between."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    theta = math.radians(spec.angle_deg)
    u = (xx - (width - 1) / 2) * math.cos(theta) + (yy - (height - 1) / 2) * math.sin(theta)
    centers = spec.offset + (np.arange(spec.seam_count) - (spec.seam_count - 1) / 2) * spec.seam_spacing
    dist = np.min(np.abs(u[None] - centers[:, None, None]), axis=0)
    half = spec.seam_width / 2
    if spec.edge_ramp > 0:
        weight = np.clip(1.0 - (dist - half) / spec.edge_ramp, 0.0, 1.0)
    else:
        weight = (dist <= half).astype(np.float64)
    return 1.0 - (1.0 - spec.attenuation) * weight


def glint_field(height: int, width: int, spec: GlintSpec, rng: np.random.Generator) -> np.ndarray:
    """Additive brightness map (before clamping)."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.zeros((height, width))
    for _ in range(spec.count):
        cy, cx = rng.uniform(0, height - 1), rng.uniform(0, width - 1)
        ry, rx = rng.uniform(spec.radius_min, spec.radius_max, size=2)
        phi = rng.uniform(0, math.pi)
        dy, dx = yy - cy, xx - cx
        a = dx * math.cos(phi) + dy * math.sin(phi)
        b = -dx * math.sin(phi) + dy * math.cos(phi)
        q2 = (a / rx) ** 2 + (b / ry) ** 2
        rho2 = q2 * rx * ry
        out += np.where(q2 <= 1.0, spec.brightness * np.exp(-rho2 / (2 * spec.sigma**2)), 0.0)
    return out


def synth_degrade(clean: MultibandRaster, spec: DegradeSpec) -> tuple[MultibandRaster, np.ndarray, np.ndarray]:
    """Darken shadow seams multiplicatively, then add glint and clamp to 1.

    Returns (degraded, shadow_mask, glint_mask); pixels outside both masks are
    bit-identical to the input.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = clean.height, clean.width
    data = clean.data.copy()
    shadow_mask = np.zeros((h, w), dtype=bool)
    glint_mask = np.zeros((h, w), dtype=bool)
    if spec.shadow is not None:
        factor = shadow_factor(h, w, spec.shadow)
        shadow_mask = factor < 1.0
        data[:, shadow_mask] = (data[:, shadow_mask] * factor[shadow_mask]).astype(np.float32)
    if spec.glint is not None:
        add = glint_field(h, w, spec.glint, rng)
        glint_mask = add > 0.0
        data[:, glint_mask] = np.minimum(1.0, data[:, glint_mask] + add[glint_mask]).astype(np.float32)
    return MultibandRaster(data, clean.band_names), shadow_mask, glint_mask


def random_degrade_spec(category: str, rng: np.random.Generator) -> DegradeSpec:
    """Draw a degradation for one 200px window of the given category."""
    if category not in CATEGORIES:
        raise ConfigError(f"unknown category {category!r}")
    shadow = glint = None
    if category in ("shadow", "both"):
        shadow = ShadowSpec(
            angle_deg=float(rng.uniform(0, 180)),
            seam_width=float(rng.uniform(25, 70)),
            attenuation=float(rng.uniform(0.3, 0.6)),
            edge_ramp=float(rng.uniform(4, 16)),
            seam_count=int(rng.integers(1, 3)),
            seam_spacing=float(rng.uniform(70, 110)),
            offset=float(rng.uniform(-50, 50)),
        )
    if category in ("glint", "both"):
        glint = GlintSpec(
            count=int(rng.integers(1, 5)),
            radius_min=12.0,
            radius_max=40.0,
            brightness=float(rng.uniform(0.3, 0.8)),
            sigma=float(rng.uniform(8, 20)),
        )
    return DegradeSpec(shadow, glint, seed=int(rng.integers(0, 2**32)))


# --------------------------------------------------------------------------- dataset


@dataclass
class PatchPair:
    degraded: np.ndarray
    clean: np.ndarray
    category: str
    source_offset: tuple[int, int]
    mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.degraded.shape != self.clean.shape:
            raise ShapeError(f"degraded {self.degraded.shape} vs clean {self.clean.shape}")
        if self.category not in CATEGORIES:
            raise ConfigError(f"unknown category {self.category!r}")
        for name in ("degraded", "clean"):
            arr = getattr(self, name)
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise DataError(f"{name} values leave [0, 1]")


def _category_list(counts: dict[str, int]) -> list[str]:
    unknown = set(counts) - set(CATEGORIES)
    if unknown:
        raise ConfigError(f"unknown categories {sorted(unknown)}")
    if any(v < 0 for v in counts.values()):
        raise ConfigError("category counts must be >= 0")
    return [cat for cat in CATEGORIES for _ in range(counts.get(cat, 0))]


def build_dataset(
    clean: MultibandRaster,
    counts: dict[str, int] | None = None,
    seed: int = 0,
    specs: Sequence[DegradeSpec] | None = None,
    window: int = WINDOW,
    stride: int = 100,
    size: int = MODEL_SIZE,
) -> list[PatchPair]:
    """Pair each degraded window with the same undegraded window.

    ``clean`` must already be normalized to [0, 1]. Windows are drawn without
    replacement from the sliding-window grid; ``specs`` (one per pair) override
    the randomly drawn degradations.
    """
    categories = _category_list(DEFAULT_COUNTS if counts is None else counts)
    if not categories:
        raise CapacityError("no pairs requested")
    if specs is not None and len(specs) != len(categories):
        raise ConfigError(f"{len(specs)} specs for {len(categories)} pairs")
    offsets = window_offsets(clean.height, clean.width, window, stride)
    if len(offsets) < len(categories):
        raise CapacityError(
            f"raster supports {len(offsets)} distinct {window}px windows at stride {stride}, "
            f"{len(categories)} requested"
        )
    order = np.random.default_rng(derive_seed(seed, "windows")).permutation(len(offsets))
    pairs = []
    for i, category in enumerate(categories):
        r, c = offsets[order[i]]
        window_clean = MultibandRaster(clean.data[:, r:r + window, c:c + window], clean.band_names)
        if specs is not None:
            spec = specs[i]
        else:
            spec = random_degrade_spec(category, np.random.default_rng(derive_seed(seed, "pair", i)))
        degraded, shadow_mask, glint_mask = synth_degrade(window_clean, spec)
        mask = resize((shadow_mask | glint_mask).astype(np.float32), size) > 0
        pairs.append(PatchPair(
            degraded=resize(degraded.data, size),
            clean=resize(window_clean.data, size),
            category=category,
            source_offset=(int(r), int(c)),
            mask=mask,
        ))
    return pairs


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    folds: tuple[int, ...]
    seed: int

    def test_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.folds) if f == fold]

    def train_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.folds) if f != fold]

    def sizes(self) -> list[int]:
        return [self.folds.count(f) for f in range(self.k)]


def kfold_split(pairs: Sequence[PatchPair] | Sequence[str], k: int = 10, seed: int = 0) -> FoldAssignment:
    """Stratified k-fold assignment.

    Pairs are shuffled within each category, the categories are concatenated,
    and positions are dealt round-robin, so fold sizes differ by at most one and
    every fold holds its share of each category to within one pair.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    categories = [p if isinstance(p, str) else p.category for p in pairs]
    if len(categories) < k:
        raise CapacityError(f"{len(categories)} pairs cannot fill {k} folds")
    rng = np.random.default_rng(derive_seed(seed, "folds"))
    dealt: list[int] = []
    for cat in CATEGORIES:
        members = [i for i, c in enumerate(categories) if c == cat]
        dealt.extend(members[j] for j in rng.permutation(len(members)))
    folds = [0] * len(categories)
    for pos, idx in enumerate(dealt):
        folds[idx] = pos % k
    return FoldAssignment(k, tuple(folds), seed)


def write_dataset(pairs: Sequence[PatchPair], out_dir: str | Path,
                  folds: FoldAssignment | None = None) -> Path:
    """Store each pair as two MBRF files plus a manifest CSV; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "patches").mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for i, pair in enumerate(pairs):
            deg = Path("patches") / f"pair{i:04d}_degraded.mbrf"
            cln = Path("patches") / f"pair{i:04d}_clean.mbrf"
            save_raster(MultibandRaster(pair.degraded), out_dir / deg)
            save_raster(MultibandRaster(pair.clean), out_dir / cln)
            fold = "" if folds is None else folds.folds[i]
            writer.writerow([i, pair.category, pair.source_offset[0], pair.source_offset[1],
                             fold, deg.as_posix(), cln.as_posix()])
    return manifest


def read_dataset(manifest: str | Path) -> list[PatchPair]:
    manifest = Path(manifest)
    pairs = []
    with manifest.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{manifest}: manifest lacks columns {sorted(missing)}")
        for row in reader:
            pairs.append(PatchPair(
                degraded=load_raster(manifest.parent / row["degraded_path"]).data,
                clean=load_raster(manifest.parent / row["clean_path"]).data,
                category=row["category"],
                source_offset=(int(row["row"]), int(row["col"])),
            ))
    return pairs


# --------------------------------------------------------------------------- stitching


def stitch(
    patches: Iterable[tuple[tuple[int, int], np.ndarray]],
    canvas: tuple[int, int, int],
    original: MultibandRaster | None = None,
) -> MultibandRaster:
    """Average overlapping patches onto a (bands, height, width) canvas.

    Pixels no patch covers come from ``original`` (zeros if none is given).
    """
    bands, height, width = canvas
    total = np.zeros(canvas, dtype=np.float64)
    count = np.zeros((height, width), dtype=np.int64)
    for (r, c), data in patches:
        data = np.asarray(data)
        if data.ndim != 3 or data.shape[0] != bands:
            raise ShapeError(f"patch shape {data.shape} does not match {bands} bands")
        ph, pw = data.shape[1:]
        if r < 0 or c < 0 or r + ph > height or c + pw > width:
            raise ShapeError(f"patch at ({r}, {c}) of size {ph}x{pw} leaves the {height}x{width} canvas")
        total[:, r:r + ph, c:c + pw] += data
        count[r:r + ph, c:c + pw] += 1
    covered = count > 0
    out = np.zeros(canvas, dtype=np.float32)
    if original is not None:
        if original.data.shape != tuple(canvas):
            raise ShapeError(f"original {original.data.shape} does not match canvas {canvas}")
        out[:] = original.data
    out[:, covered] = (total[:, covered] / count[covered]).astype(np.float32)
    return MultibandRaster(out)


def coverage(offsets: Iterable[tuple[int, int]], window: int, height: int, width: int) -> np.ndarray:
    count = np.zeros((height, width), dtype=np.int64)
    for r, c in offsets:
        count[r:r + window, c:c + window] += 1
    return count
