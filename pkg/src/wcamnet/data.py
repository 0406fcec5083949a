"""Synthetic rain, paired datasets and PNG I/O.

Rainy images follow the layered haze model

    J = T * (I + sum_i S_i) + (1 - T) * A

with sparse oriented streak layers ``S_i``, a smooth transmission map ``T``
and a global atmospheric light ``A``.  Every random draw is derived from an
integer seed so a sample regenerates bit-identically from ``(I, seed)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

log = logging.getLogger(__name__)

MANIFEST = "manifest.tsv"


class DataError(Exception):
    """Unreadable, missing or malformed image data."""


# ---------------------------------------------------------------- seeding
def derive_seed(*keys: int) -> int:
    """Stable 32-bit seed from a tuple of non-negative ints."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


# ---------------------------------------------------------------- rain model
@dataclass
class RainParams:
    n_layers: int = 0
    angles: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    densities: list = field(default_factory=list)
    intensities: list = field(default_factory=list)
    fog_strength: float = 0.0
    airlight: float | tuple = 0.8

    def __post_init__(self):
        n = self.n_layers
        if n < 0 or not (len(self.angles) == len(self.lengths) == len(self.densities)
                         == len(self.intensities) == n):
            raise ValueError("per-layer parameter lists must all have n_layers entries")
        if any(i < 0 for i in self.intensities):
            raise ValueError("streak intensities must be non-negative")
        if not 0.0 <= self.fog_strength <= 1.0:
            raise ValueError("fog_strength must lie in [0, 1]")
        if np.any(np.asarray(self.airlight) < 0) or np.any(np.asarray(self.airlight) > 1):
            raise ValueError("airlight must lie in [0, 1]")


PRESETS = {
    "identity": None,
    "light": dict(layers=(1, 2), length=(7, 11), density=(0.002, 0.005),
                  intensity=(0.3, 0.5), fog=(0.0, 0.2), airlight=(0.7, 0.9)),
    "default": dict(layers=(2, 3), length=(9, 15), density=(0.002, 0.01),
                    intensity=(0.4, 0.8), fog=(0.1, 0.4), airlight=(0.7, 0.9)),
    "heavy": dict(layers=(3, 4), length=(11, 17), density=(0.008, 0.02),
                  intensity=(0.5, 0.9), fog=(0.3, 0.6), airlight=(0.75, 0.95)),
}


def sample_rain_params(seed: int, preset: str = "default") -> RainParams:
    if preset not in PRESETS:
        raise ValueError(f"unknown rain preset {preset!r}; choose from {sorted(PRESETS)}")
    ranges = PRESETS[preset]
    if ranges is None:
        return RainParams()
    rng = _rng(seed, 1)
    n = int(rng.integers(ranges["layers"][0], ranges["layers"][1] + 1))
    master = rng.uniform(60.0, 120.0)
    return RainParams(
        n_layers=n,
        angles=[float(master + rng.uniform(-20.0, 20.0)) for _ in range(n)],
        lengths=[int(rng.integers(ranges["length"][0], ranges["length"][1] + 1)) for _ in range(n)],
        densities=[float(rng.uniform(*ranges["density"])) for _ in range(n)],
        intensities=[float(rng.uniform(*ranges["intensity"])) for _ in range(n)],
        fog_strength=float(rng.uniform(*ranges["fog"])),
        airlight=float(rng.uniform(*ranges["airlight"])),
    )


def line_kernel(length: int, angle: float) -> np.ndarray:
    """Binary kernel of a centred ``length``-pixel line; 90 degrees is vertical."""
    half = (length - 1) / 2.0
    r = int(math.ceil(half))
    k = np.zeros((2 * r + 1, 2 * r + 1))
    theta = math.radians(angle)
    for t in np.linspace(-half, half, max(length, 1)):
        col = int(round(r + t * math.cos(theta)))
        row = int(round(r - t * math.sin(theta)))
        k[row, col] = 1.0
    return k


def generate_streak_layer(shape, angle: float, length: int, density: float,
                          intensity: float, seed: int) -> np.ndarray:
    """Bernoulli impulses smeared by an oriented line kernel, ``[1,H,W]``."""
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")
    H, W = shape
    impulses = (_rng(seed, 2).random((H, W)) < density).astype(np.float64)
    layer = ndimage.convolve(impulses, line_kernel(length, angle), mode="wrap")
    return (intensity * layer)[None]


def generate_transmission(shape, seed: int, fog_strength: float) -> np.ndarray:
    """Smooth map in ``[1 - fog_strength, 1]`` from bicubically upsampled value noise."""
    if not 0.0 <= fog_strength <= 1.0:
        raise ValueError(f"fog_strength must lie in [0, 1], got {fog_strength}")
    H, W = shape
    if fog_strength == 0.0:
        return np.ones((1, H, W))
    gh, gw = max(2, H // 16 + 2), max(2, W // 16 + 2)
    coarse = _rng(seed, 3).random((gh, gw))
    noise = ndimage.zoom(coarse, (H / gh, W / gw), order=3, mode="nearest", grid_mode=False)
    noise = np.clip(noise[:H, :W], 0.0, 1.0)
    return np.clip(1.0 - fog_strength * noise, 0.0, 1.0)[None]


def apply_rain_model(clean: np.ndarray, layers, transmission: np.ndarray, airlight) -> np.ndarray:
    """Evaluate the haze/streak model pointwise (no clamping)."""
    clean = np.asarray(clean, dtype=np.float64)
    T = np.asarray(transmission, dtype=np.float64)
    if T.shape[-2:] != clean.shape[-2:]:
        raise ValueError(f"transmission {T.shape} does not match image {clean.shape}")
    streaks = sum((np.asarray(s, dtype=np.float64) for s in layers), np.zeros_like(T))
    A = np.asarray(airlight, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None, None]
    return T * (clean + streaks) + (1.0 - T) * A


def synthesize_rain(clean: np.ndarray, rp: RainParams, seed: int, clamp: bool = True) -> np.ndarray:
    """Rainy version of a ``[3,H,W]`` image in [0,1]."""
    clean = np.asarray(clean, dtype=np.float64)
    if clean.min() < 0 or clean.max() > 1:
        raise ValueError("clean image must lie in [0, 1]")
    shape = clean.shape[-2:]
    layers = [generate_streak_layer(shape, rp.angles[i], rp.lengths[i], rp.densities[i],
                                    rp.intensities[i], derive_seed(seed, 10 + i))
              for i in range(rp.n_layers)]
    T = generate_transmission(shape, derive_seed(seed, 1), rp.fog_strength)
    J = apply_rain_model(clean, layers, T, rp.airlight)
    return np.clip(J, 0.0, 1.0) if clamp else J


# ---------------------------------------------------------------- clean images
def procedural_image(shape, seed: int) -> np.ndarray:
    """Colourful piecewise-smooth texture ``[3,H,W]`` in [0,1]."""
    H, W = shape
    rng = _rng(seed, 0)
    img = np.zeros((3, H, W))
    for octave, weight in ((4, 0.6), (8, 0.3), (16, 0.1)):
        gh, gw = max(2, H // octave + 2), max(2, W // octave + 2)
        for c in range(3):
            coarse = rng.random((gh, gw))
            img[c] += weight * np.clip(ndimage.zoom(coarse, (H / gh, W / gw), order=3,
                                                    mode="nearest", grid_mode=False)[:H, :W], 0, 1)
    yy, xx = np.mgrid[0:H, 0:W]
    for _ in range(int(rng.integers(2, 6))):
        colour = rng.random(3)[:, None, None]
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        if rng.random() < 0.5:
            rad = rng.uniform(0.1, 0.3) * min(H, W)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2
        else:
            hh, ww = rng.uniform(0.1, 0.4) * H, rng.uniform(0.1, 0.4) * W
            mask = (abs(yy - cy) < hh) & (abs(xx - cx) < ww)
        img = np.where(mask[None], 0.35 * img + 0.65 * colour, img)
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------- samples
@dataclass
class PairedSample:
    clean: np.ndarray
    rainy: np.ndarray
    seed: int
    stem: str = ""
    params: RainParams | None = None


def make_pair(clean: np.ndarray, seed: int, preset: str = "default", stem: str = "") -> PairedSample:
    rp = sample_rain_params(seed, preset)
    return PairedSample(clean, synthesize_rain(clean, rp, seed), seed, stem, rp)


def random_crop_pair(sample: PairedSample, size: int, seed: int) -> PairedSample:
    """Same ``size x size`` window cut from clean and rainy."""
    H, W = sample.clean.shape[-2:]
    if size > H or size > W:
        raise ValueError(f"crop {size} larger than image {H}x{W}")
    if size % 16:
        raise ValueError(f"crop size must be a multiple of 16, got {size}")
    rng = _rng(seed, 4)
    top = int(rng.integers(0, H - size + 1))
    left = int(rng.integers(0, W - size + 1))
    win = (slice(None), slice(top, top + size), slice(left, left + size))
    return PairedSample(sample.clean[win], sample.rainy[win], sample.seed, sample.stem, sample.params)


# ---------------------------------------------------------------- PNG I/O
def read_image(path) -> np.ndarray:
    """8-bit RGB PNG -> float32 ``[3,H,W]`` in [0,1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise DataError(f"{path}: expected an RGB image, got mode {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from exc
    return (arr.transpose(2, 0, 1) / 255.0).astype(np.float32)


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, image: np.ndarray) -> None:
    """``[3,H,W]`` (RGB) or ``[H,W]`` (grayscale) array in [0,1] -> PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = to_bytes(np.asarray(image))
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    try:
        Image.fromarray(arr).save(path, format="PNG")
    except OSError as exc:
        raise DataError(f"{path}: cannot write image ({exc})") from exc


# ---------------------------------------------------------------- datasets
def list_clean_sources(directory) -> list:
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise DataError(f"{directory}: no PNG files found")
    return files


def generate_dataset(out_dir, count: int, size: int = 64, preset: str = "default",
                     seed: int = 0, clean_dir=None) -> list:
    """Write ``clean/NNN.png``, ``rain/NNN.png`` and a ``stem<TAB>seed`` manifest."""
    out = Path(out_dir)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "rain").mkdir(parents=True, exist_ok=True)
    sources = list_clean_sources(clean_dir) if clean_dir else None
    width = max(3, len(str(count - 1)))
    rows = []
    for i in range(count):
        stem = f"{i:0{width}d}"
        s = derive_seed(seed, i)
        if sources:
            clean = read_image(sources[i % len(sources)]).astype(np.float64)
            H, W = clean.shape[1:]
            clean = clean[:, : H - H % 16, : W - W % 16]
        else:
            clean = procedural_image((size, size), s)
        clean = to_bytes(clean) / 255.0
        pair = make_pair(clean, s, preset, stem)
        write_image(out / "clean" / f"{stem}.png", pair.clean)
        write_image(out / "rain" / f"{stem}.png", pair.rainy)
        rows.append((stem, s))
    with open(out / MANIFEST, "w") as fh:
        fh.writelines(f"{stem}\t{s}\n" for stem, s in rows)
    log.info("wrote %d pairs to %s", count, out)
    return rows


def load_dataset(directory) -> list:
    """Paired samples found under ``clean/`` and ``rain/``, sorted by stem.

    Files without a partner are skipped with a warning.
    """
    root = Path(directory)
    if not (root / "clean").is_dir() or not (root / "rain").is_dir():
        raise DataError(f"{root}: expected clean/ and rain/ subdirectories")
    seeds = {}
    if (root / MANIFEST).exists():
        for line in (root / MANIFEST).read_text().splitlines():
            if line.strip():
                stem, s = line.split("\t")
                seeds[stem] = int(s)
    clean = {p.stem: p for p in (root / "clean").glob("*.png")}
    rain = {p.stem: p for p in (root / "rain").glob("*.png")}
    for stem in sorted(set(clean) ^ set(rain)):
        log.warning("skipping unpaired file %s", stem)
    samples = []
    for stem in sorted(set(clean) & set(rain)):
        c, r = read_image(clean[stem]), read_image(rain[stem])
        if c.shape != r.shape:
            log.warning("skipping %s: clean %s and rain %s differ in size", stem, c.shape, r.shape)
            continue
        samples.append(PairedSample(c, r, seeds.get(stem, -1), stem))
    if not samples:
        raise DataError(f"{root}: no paired images found")
    return samples
