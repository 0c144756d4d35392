"""Procedural segmentation scenes, colour jitter and style shifts.

A scene's geometry (label mask, per-pixel texture modulation and noise field)
is a pure function of its seed. Its appearance is a pure function of the
geometry and a :class:`StyleParams`, so re-rendering under another style
leaves the mask untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor import ContractError

PALETTE = np.array(
    [
        [0.85, 0.25, 0.20],
        [0.25, 0.70, 0.25],
        [0.20, 0.35, 0.85],
        [0.90, 0.80, 0.20],
        [0.70, 0.25, 0.75],
        [0.20, 0.75, 0.80],
        [0.95, 0.55, 0.15],
        [0.55, 0.55, 0.55],
    ]
)
MAX_CLASSES = len(PALETTE)
TEXTURE_AMPLITUDE = 0.3


@dataclass(frozen=True)
class StyleParams:
    name: str = "source"
    base_colors: tuple = tuple(map(tuple, PALETTE))
    hue_deg: float = 0.0
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    noise: float = 0.02

    def __post_init__(self):
        if min(self.brightness, self.contrast, self.saturation) <= 0:
            raise ContractError(f"style {self.name!r}: multipliers must be positive")
        if self.noise < 0:
            raise ContractError(f"style {self.name!r}: noise amplitude must be non-negative")


SOURCE = StyleParams()
STYLES = {
    "source": SOURCE,
    "dusk": replace(SOURCE, name="dusk", hue_deg=30.0, brightness=0.6, contrast=0.7, saturation=0.7, noise=0.03),
    "fog": replace(SOURCE, name="fog", hue_deg=-20.0, brightness=1.3, contrast=0.5, saturation=0.45, noise=0.03),
    "neon": replace(SOURCE, name="neon", hue_deg=-35.0, brightness=0.9, contrast=1.5, saturation=1.6, noise=0.02),
}
SHIFTED_STYLES = ("dusk", "fog", "neon")


def get_style(name: str) -> StyleParams:
    if name not in STYLES:
        raise ContractError(f"unknown style {name!r}; known: {sorted(STYLES)}")
    return STYLES[name]


@dataclass
class Geometry:
    mask: np.ndarray  # (H, W) int
    texture: np.ndarray  # (H, W) luminance modulation in [-1, 1]
    noise: np.ndarray  # (H, W, 3) standard normal field


@dataclass
class Scene:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) int
    style_id: str
    seed: int
    geometry: Geometry = field(repr=False, default=None)


# ---------------------------------------------------------------- geometry


def _texture(kind: int, yy: np.ndarray, xx: np.ndarray, phase: int) -> np.ndarray:
    period = 4
    if kind == 0:
        return np.zeros(yy.shape)
    if kind == 1:  # horizontal stripes
        v = ((yy + phase) // (period // 2)) % 2
    elif kind == 2:  # vertical stripes
        v = ((xx + phase) // (period // 2)) % 2
    elif kind == 3:  # checkerboard
        v = (((yy + phase) // 2) + ((xx + phase) // 2)) % 2
    elif kind == 4:  # diagonal stripes
        v = ((yy + xx + phase) // 2) % 2
    elif kind == 5:  # sparse dots
        v = (((yy + phase) % 4) == 0) & (((xx + phase) % 4) == 0)
    elif kind == 6:  # anti-diagonal stripes
        v = ((yy - xx + phase) // 2) % 2
    else:  # wide horizontal bands
        v = ((yy + phase) // 4) % 2
    return 2.0 * v.astype(np.float64) - 1.0


def _shape_mask(rng: np.random.Generator, h: int, w: int, yy, xx) -> np.ndarray:
    kind = rng.integers(3)
    if kind == 0:
        rh, rw = rng.integers(h // 5, h // 2 + 1), rng.integers(w // 5, w // 2 + 1)
        y0, x0 = rng.integers(0, h - rh + 1), rng.integers(0, w - rw + 1)
        return (yy >= y0) & (yy < y0 + rh) & (xx >= x0) & (xx < x0 + rw)
    if kind == 1:
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(h / 8, h / 3), rng.uniform(w / 8, w / 3)
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    angle = rng.uniform(0, math.pi)
    offset = rng.uniform(-0.3, 0.3) * (h + w) / 2
    width = rng.uniform(h / 10, h / 4)
    d = (xx - w / 2) * math.cos(angle) + (yy - h / 2) * math.sin(angle) - offset
    return np.abs(d) <= width / 2


def generate_geometry(seed: int, n_classes: int, size: tuple = (32, 32), floor: float = 1.0,
                      extra_shapes: int = 3) -> Geometry:
    if n_classes < 2:
        raise ContractError("generate_scene: need at least two classes")
    if n_classes > MAX_CLASSES:
        raise ContractError(f"generate_scene: at most {MAX_CLASSES} classes are supported")
    h, w = size
    if not (8 <= h <= 256 and 8 <= w <= 256):
        raise ContractError("generate_scene: image extents must lie in [8, 256]")
    rng = np.random.default_rng([int(seed), n_classes, h, w])
    yy, xx = np.mgrid[0:h, 0:w]
    order = rng.permutation(n_classes)
    background = int(order[0])
    wanted = [int(c) for c in order[1:] if rng.random() < floor]
    wanted += [int(c) for c in rng.integers(0, n_classes, extra_shapes)]
    mask = np.full((h, w), background, dtype=np.int64)
    phases = rng.integers(0, 4, n_classes)
    for c in wanted:
        mask[_shape_mask(rng, h, w, yy, xx)] = c
    required = {background} | {int(c) for c in order[1:] if c in wanted}
    # occlusion can hide a required class; re-stamp it as a small patch
    for _ in range(4 * n_classes):
        missing = sorted(required - set(np.unique(mask).tolist()))
        if not missing:
            break
        c = missing[0]
        ph, pw = max(3, h // 6), max(3, w // 6)
        y0, x0 = rng.integers(0, h - ph + 1), rng.integers(0, w - pw + 1)
        mask[y0 : y0 + ph, x0 : x0 + pw] = c
    texture = np.zeros((h, w))
    for c in range(n_classes):
        sel = mask == c
        if sel.any():
            texture[sel] = _texture(c, yy, xx, int(phases[c]))[sel]
    noise = rng.standard_normal((h, w, 3))
    return Geometry(mask, texture, noise)


# ---------------------------------------------------------------- photometrics

_GRAY = np.array([0.299, 0.587, 0.114])


def _gray(img: np.ndarray) -> np.ndarray:
    return img @ _GRAY


def hue_rotation_matrix(deg: float) -> np.ndarray:
    """Rotation about the grey axis of RGB space."""
    th = math.radians(deg)
    c, s = math.cos(th), math.sin(th)
    k = 1.0 / 3.0
    r = math.sqrt(k)
    return np.array(
        [
            [c + (1 - c) * k, k * (1 - c) - r * s, k * (1 - c) + r * s],
            [k * (1 - c) + r * s, c + k * (1 - c), k * (1 - c) - r * s],
            [k * (1 - c) - r * s, k * (1 - c) + r * s, c + k * (1 - c)],
        ]
    )


def adjust(img: np.ndarray, brightness=1.0, contrast=1.0, saturation=1.0, hue_deg=0.0) -> np.ndarray:
    """Brightness, contrast, saturation then hue, on an (..., 3) array; no clamping."""
    out = img * brightness
    if contrast != 1.0:
        m = _gray(out).mean(axis=(-2, -1), keepdims=True)[..., None] if out.ndim >= 3 else _gray(out).mean()
        out = (out - m) * contrast + m
    if saturation != 1.0:
        g = _gray(out)[..., None]
        out = g + (out - g) * saturation
    if hue_deg != 0.0:
        out = out @ hue_rotation_matrix(hue_deg).T
    return out


def render(geom: Geometry, style: StyleParams) -> np.ndarray:
    colors = np.asarray(style.base_colors, dtype=np.float64)
    base = colors[geom.mask]
    img = base * (1.0 + TEXTURE_AMPLITUDE * geom.texture)[..., None]
    img = adjust(img, style.brightness, style.contrast, style.saturation, style.hue_deg)
    img = img + style.noise * geom.noise
    return np.clip(img, 0.0, 1.0)


def generate_scene(seed: int, n_classes: int = 5, size: tuple = (32, 32), style: StyleParams = SOURCE,
                   floor: float = 1.0) -> Scene:
    geom = generate_geometry(seed, n_classes, size, floor)
    return Scene(render(geom, style), geom.mask, style.name, int(seed), geom)


def domain_shift(scene: Scene, target_style: StyleParams) -> Scene:
    """Re-render the scene's geometry under another style; the mask is shared."""
    geom = scene.geometry
    if geom is None:
        raise ContractError("domain_shift: scene carries no geometry")
    return Scene(render(geom, target_style), scene.mask, target_style.name, scene.seed, geom)


def color_jitter(image: np.ndarray, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Random brightness/contrast/saturation in [1-0.8s, 1+0.8s] and hue in [-36s, 36s] degrees.

    Accepts a single (H, W, 3) image or a (B, H, W, 3) batch (independent
    factors per image). Output is clamped to [0, 1].
    """
    if not 0.0 <= strength <= 1.0:
        raise ContractError("color_jitter: strength must lie in [0, 1]")
    image = np.asarray(image, dtype=np.float64)
    if strength == 0.0:
        return image.copy()
    if image.ndim == 4:
        return np.stack([color_jitter(im, strength, rng) for im in image])
    lo, hi = 1.0 - 0.8 * strength, 1.0 + 0.8 * strength
    b, c, s = rng.uniform(lo, hi, 3)
    hue = rng.uniform(-36.0 * strength, 36.0 * strength)
    return np.clip(adjust(image, b, c, s, hue), 0.0, 1.0)


# ---------------------------------------------------------------- corpora


@dataclass
class Corpus:
    """Scenes regenerated on demand from (seed, style_id, split) entries."""

    entries: list  # of (seed, style_id, split)
    n_classes: int = 5
    size: tuple = (32, 32)
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def scene(self, i: int) -> Scene:
        if i not in self._cache:
            seed, style_id, _ = self.entries[i]
            self._cache[i] = generate_scene(seed, self.n_classes, self.size, get_style(style_id))
        return self._cache[i]

    def arrays(self, idx=None) -> tuple[np.ndarray, np.ndarray]:
        idx = range(len(self)) if idx is None else idx
        scenes = [self.scene(int(i)) for i in idx]
        return np.stack([s.image for s in scenes]), np.stack([s.mask for s in scenes])

    def restyle(self, style_id: str) -> "Corpus":
        get_style(style_id)
        return Corpus([(s, style_id, sp) for s, _, sp in self.entries], self.n_classes, self.size)

    def class_pixel_counts(self) -> np.ndarray:
        _, masks = self.arrays()
        return np.bincount(masks.reshape(-1), minlength=self.n_classes)


def make_corpus(split: str, count: int, style_id: str = "source", n_classes: int = 5, size=(32, 32),
                base_seed: int = 0) -> Corpus:
    """Train and eval splits draw from disjoint seed ranges."""
    offset = {"train": 0, "eval": 1_000_000}[split]
    start = offset + base_seed * 10_000
    return Corpus([(start + k, style_id, split) for k in range(count)], n_classes, tuple(size))


def write_manifest(path, corpus: Corpus) -> None:
    lines = [f"# n_classes={corpus.n_classes} size={corpus.size[0]}x{corpus.size[1]}"]
    lines += [f"{seed} {style} {split}" for seed, style, split in corpus.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> Corpus:
    n_classes, size, entries = 5, (32, 32), []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "n_classes":
                    n_classes = int(val)
                elif key == "size":
                    hh, ww = val.split("x")
                    size = (int(hh), int(ww))
            continue
        seed, style, split = line.split()
        entries.append((int(seed), style, split))
    return Corpus(entries, n_classes, size)


def write_ppm(path, image: np.ndarray) -> None:
    h, w, _ = image.shape
    pix = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + pix.tobytes())


def write_pgm(path, mask: np.ndarray, n_classes: int) -> None:
    h, w = mask.shape
    step = 255 // max(n_classes - 1, 1)
    pix = (mask * step).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pix.tobytes())
