"""Tensor primitives: orthonormal 2-D Haar pyramids, scale masks, norm-ball
projections, labelled counter-based RNG streams and the MMT1 tensor format.

Images and perturbations are plain ``numpy`` arrays laid out H x W x C.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MMT_MAGIC = b"MMT1"


class DimensionError(ValueError):
    """Raised when an array does not have the shape an operation needs."""


def as_hwc(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise DimensionError(f"expected H x W x C array, got shape {x.shape}")
    return x


def check_image(x: np.ndarray, *, bounded: bool = False) -> np.ndarray:
    """Validate an ImageTensor: power-of-two sides >= 8, 1 or 3 channels, finite."""
    x = as_hwc(x)
    h, w, c = x.shape
    for axis, n in (("height", h), ("width", w)):
        if n < 8 or n & (n - 1):
            raise DimensionError(f"{axis}={n} is not a power of two >= 8")
    if c not in (1, 3):
        raise DimensionError(f"channels={c}, expected 1 or 3")
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite values")
    if bounded and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("image values outside [0, 1]")
    return x


# ---------------------------------------------------------------------------
# Haar wavelets


@dataclass
class WaveletPyramid:
    """Multi-level Haar coefficients.

    ``details[0]`` is the finest level; each entry is an ``(LH, HL, HH)`` triple.
    """

    approx: np.ndarray
    details: list[tuple[np.ndarray, np.ndarray, np.ndarray]]

    @property
    def levels(self) -> int:
        return len(self.details)

    def coefficients(self) -> list[np.ndarray]:
        out = [self.approx]
        for bands in self.details:
            out.extend(bands)
        return out

    def copy(self) -> "WaveletPyramid":
        return WaveletPyramid(
            self.approx.copy(), [tuple(b.copy() for b in lvl) for lvl in self.details]
        )


def _haar_step(x: np.ndarray):
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    ll = (a + b + c + d) / 2
    lh = (a + b - c - d) / 2
    hl = (a - b + c - d) / 2
    hh = (a - b - c + d) / 2
    return ll, (lh, hl, hh)


def _haar_step_inv(ll, lh, hl, hh) -> np.ndarray:
    h, w, ch = ll.shape
    out = np.empty((2 * h, 2 * w, ch), dtype=np.result_type(ll, np.float64))
    out[0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[0::2, 1::2] = (ll + lh - hl - hh) / 2
    out[1::2, 0::2] = (ll - lh + hl - hh) / 2
    out[1::2, 1::2] = (ll - lh - hl + hh) / 2
    return out


def haar_dwt2(image: np.ndarray, levels: int = 3) -> WaveletPyramid:
    """Orthonormal 2-D Haar decomposition applied independently per channel."""
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    x = as_hwc(image).astype(np.float64)
    step = 1 << levels
    for axis, n in (("height", x.shape[0]), ("width", x.shape[1])):
        if n % step:
            raise DimensionError(f"{axis}={n} is not divisible by 2**levels={step}")
    details = []
    for _ in range(levels):
        x, bands = _haar_step(x)
        details.append(bands)
    return WaveletPyramid(x, details)


def haar_idwt2(pyramid: WaveletPyramid) -> np.ndarray:
    x = np.asarray(pyramid.approx, dtype=np.float64)
    for level in range(pyramid.levels - 1, -1, -1):
        lh, hl, hh = pyramid.details[level]
        for name, band in (("LH", lh), ("HL", hl), ("HH", hh)):
            if band.shape != x.shape:
                raise DimensionError(
                    f"level {level + 1} {name} has shape {band.shape}, expected {x.shape}"
                )
        x = _haar_step_inv(x, lh, hl, hh)
    return x


@dataclass(frozen=True)
class ScaleMask:
    """Selects which subbands survive. ``level_weights`` scale kept detail
    levels (finest first); the approximation band is kept at weight 1."""

    keep_approx: bool = False
    keep_detail: tuple[bool, ...] = (True, True, True)
    level_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "keep_detail", tuple(bool(k) for k in self.keep_detail))
        weights = self.level_weights
        if weights is None:
            weights = (1.0,) * len(self.keep_detail)
        weights = tuple(float(w) for w in weights)
        object.__setattr__(self, "level_weights", weights)
        if len(weights) != len(self.keep_detail):
            raise ValueError("level_weights and keep_detail differ in length")
        if any(w < 0 for w in weights):
            raise ValueError("level weights must be nonnegative")
        if not self.keep_approx and not any(self.keep_detail):
            raise ValueError("mask drops every subband")

    @property
    def levels(self) -> int:
        return len(self.keep_detail)

    @classmethod
    def keep_all(cls, levels: int = 3) -> "ScaleMask":
        return cls(True, (True,) * levels)


def apply_scale_mask(pyramid: WaveletPyramid, mask: ScaleMask) -> WaveletPyramid:
    if mask.levels != pyramid.levels:
        raise DimensionError(
            f"mask has {mask.levels} levels, pyramid has {pyramid.levels}"
        )
    approx = pyramid.approx if mask.keep_approx else np.zeros_like(pyramid.approx)
    details = []
    for bands, keep, weight in zip(pyramid.details, mask.keep_detail, mask.level_weights):
        if keep:
            details.append(tuple(b * weight for b in bands))
        else:
            details.append(tuple(np.zeros_like(b) for b in bands))
    return WaveletPyramid(approx.copy(), details)


# ---------------------------------------------------------------------------
# projections


def project_linf(t: np.ndarray, eps: float) -> np.ndarray:
    """Clamp into the l-inf ball of radius ``eps`` (keeps the input dtype)."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    t = np.asarray(t)
    bound = eps
    if t.dtype.kind == "f":
        # largest value of this dtype that does not exceed eps
        bound = np.asarray(eps, dtype=t.dtype)
        if float(bound) > eps:
            bound = np.nextafter(bound, t.dtype.type(0))
    return np.clip(t, -bound, bound)


def project_l2(vec: np.ndarray, eps: float) -> np.ndarray:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    vec = np.asarray(vec)
    if not np.all(np.isfinite(vec)):
        raise ValueError("vector has non-finite components")
    norm = float(np.linalg.norm(vec))
    if norm <= eps:
        return vec.copy()
    out = vec * (eps / norm)
    # float32 rescaling can land one ulp outside the ball
    while float(np.linalg.norm(out)) > eps:
        out = np.nextafter(out, np.zeros_like(out))
    return out


# ---------------------------------------------------------------------------
# random streams


@dataclass(frozen=True)
class RngStream:
    """A labelled, platform-independent random stream.

    The (seed, label) pair is hashed into a Philox key, so distinct labels
    give independent streams and identical pairs replay identically.
    """

    seed: int
    label: str

    def key(self) -> int:
        digest = hashlib.blake2b(
            f"{int(self.seed)}\x1f{self.label}".encode(), digest_size=16
        ).digest()
        return int.from_bytes(digest, "little")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key()))

    def child(self, sublabel: str) -> "RngStream":
        return RngStream(self.seed, f"{self.label}/{sublabel}")


# ---------------------------------------------------------------------------
# MMT1 tensor files


def write_mmt(path: str | Path, tensor: np.ndarray) -> None:
    x = as_hwc(tensor)
    h, w, c = x.shape
    payload = np.ascontiguousarray(x, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MMT_MAGIC)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(payload)


def read_mmt(path: str | Path) -> np.ndarray:
    from .errors import ArtifactError

    data = Path(path).read_bytes()
    if len(data) < 16:
        raise ArtifactError(f"{path}: truncated header ({len(data)} bytes)")
    if data[:4] != MMT_MAGIC:
        raise ArtifactError(f"{path}: bad magic {data[:4]!r}, expected {MMT_MAGIC!r}")
    h, w, c = struct.unpack("<III", data[4:16])
    expected = 16 + 4 * h * w * c
    if len(data) != expected:
        raise ArtifactError(
            f"{path}: payload is {len(data) - 16} bytes, expected {expected - 16}"
        )
    arr = np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w, c)
    return arr.astype(np.float32)
