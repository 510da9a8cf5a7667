"""Input-transformation defenses: random resize-and-pad, bit-depth
quantisation, and a blockwise-DCT stand-in for JPEG."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from ..numerics import RngStream, as_hwc

KINDS = ("none", "randomization", "quantize", "dct_quantize")

# standard JPEG luminance table (Annex K)
JPEG_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class DefenseSpec:
    kind: str = "none"
    resize_min: float = 0.9
    resize_max: float = 1.0
    bits: int = 8
    quality: int = 75
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown defense kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 < self.resize_min <= self.resize_max <= 1.0:
            raise ValueError("resize range must satisfy 0 < min <= max <= 1")
        if not 1 <= self.bits <= 16:
            raise ValueError("bits must lie in [1, 16]")
        if not 1 <= self.quality <= 100:
            raise ValueError("quality must lie in [1, 100]")

    def label(self) -> str:
        if self.kind == "randomization":
            return f"randomization[{self.resize_min},{self.resize_max}]"
        if self.kind == "quantize":
            return f"quantize[{self.bits}bit]"
        if self.kind == "dct_quantize":
            return f"dct_quantize[q{self.quality}]"
        return "none"


def quality_table(quality: int) -> np.ndarray:
    """libjpeg-style scaling of the luminance table."""
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return np.clip(np.floor((JPEG_LUMA * scale + 50) / 100), 1, 255)


def quantize(image: np.ndarray, bits: int) -> np.ndarray:
    levels = 2**bits - 1
    return np.round(image * levels) / levels


def dct_quantize(image: np.ndarray, quality: int) -> np.ndarray:
    x = as_hwc(image)
    h, w, c = x.shape
    if h % 8 or w % 8:
        raise ValueError("dct_quantize needs sides divisible by 8")
    q = quality_table(quality)
    blocks = (x * 255.0 - 128.0).reshape(h // 8, 8, w // 8, 8, c).transpose(0, 2, 4, 1, 3)
    coef = dctn(blocks, axes=(-2, -1), norm="ortho")
    coef = np.round(coef / q) * q
    rec = idctn(coef, axes=(-2, -1), norm="ortho")
    rec = rec.transpose(0, 3, 1, 4, 2).reshape(h, w, c)
    return np.clip((rec + 128.0) / 255.0, 0.0, 1.0)


def randomize(image: np.ndarray, spec: DefenseSpec, gen: np.random.Generator) -> np.ndarray:
    x = as_hwc(image)
    h, w, c = x.shape
    factor = gen.uniform(spec.resize_min, spec.resize_max)
    nh, nw = max(1, int(np.floor(h * factor))), max(1, int(np.floor(w * factor)))
    rows = np.minimum((np.arange(nh) * h) // nh, h - 1)
    cols = np.minimum((np.arange(nw) * w) // nw, w - 1)
    small = x[rows[:, None], cols[None, :]]
    top = int(gen.integers(0, h - nh + 1))
    left = int(gen.integers(0, w - nw + 1))
    out = np.zeros_like(x)
    out[top : top + nh, left : left + nw] = small
    return out


def defend(image: np.ndarray, spec: DefenseSpec, draw: int = 0) -> np.ndarray:
    """Apply ``spec`` to one image. ``draw`` indexes the random stream so
    each image in a sweep gets its own reproducible resize/offset."""
    image = np.asarray(image)
    if spec.kind == "none":
        return image
    if spec.kind == "quantize":
        return quantize(image, spec.bits)
    if spec.kind == "dct_quantize":
        return dct_quantize(image, spec.quality)
    gen = RngStream(spec.seed, f"defense-randomization/{draw}").generator()
    return randomize(image, spec, gen)
