"""Universal perturbations: a wavelet-constrained texture patch tiled over the
image, and an l2-bounded offset in prompt-embedding space."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .numerics import (
    DimensionError,
    RngStream,
    ScaleMask,
    apply_scale_mask,
    as_hwc,
    haar_dwt2,
    haar_idwt2,
    project_l2,
    project_linf,
)

PATCH_SIZE = 64
TILE_SCALES = (1, 2, 4, 8)


@dataclass(frozen=True, eq=False)
class TextureUAP:
    base_patch: np.ndarray  # float32, PATCH_SIZE x PATCH_SIZE x C
    s_k: int
    eps_v: float
    mask: ScaleMask

    def __post_init__(self):
        if self.s_k not in TILE_SCALES:
            raise ValueError(f"tile scale s_k={self.s_k} not in {TILE_SCALES}")
        if not self.eps_v > 0:
            raise ValueError("eps_v must be positive")

    @property
    def levels(self) -> int:
        return self.mask.levels

    def with_patch(self, patch: np.ndarray) -> "TextureUAP":
        return replace(self, base_patch=np.asarray(patch, dtype=np.float32))


@dataclass(frozen=True, eq=False)
class PromptDelta:
    vector: np.ndarray  # float32
    eps_t: float

    def __post_init__(self):
        if not self.eps_t > 0:
            raise ValueError("eps_t must be positive")


CONSTRAINT_ROUNDS = 8
CONSTRAINT_TOL = 1e-7


def apply_texture_constraint(uap: TextureUAP) -> TextureUAP:
    """Mask the patch's Haar pyramid, resynthesise, then clamp to the eps_v ball.

    Clamping can leak a little energy back into dropped subbands, so the
    mask/clamp pair is alternated until the leak is below ``CONSTRAINT_TOL``
    (at most ``CONSTRAINT_ROUNDS`` times). The result always ends clamped.
    """
    patch = np.asarray(uap.base_patch, dtype=np.float32)
    for _ in range(CONSTRAINT_ROUNDS):
        pyr = apply_scale_mask(haar_dwt2(patch, uap.levels), uap.mask)
        masked = haar_idwt2(pyr)
        clamped = project_linf(masked.astype(np.float32), uap.eps_v)
        leak = float(np.max(np.abs(clamped - masked)))
        patch = clamped
        if leak <= CONSTRAINT_TOL:
            break
    return uap.with_patch(patch)


def init_uap(
    rng: RngStream,
    eps_v: float = 8 / 255,
    s_k: int = 4,
    mask: ScaleMask | None = None,
    channels: int = 3,
) -> TextureUAP:
    if not eps_v > 0:
        raise ValueError("eps_v must be positive")
    if s_k not in TILE_SCALES:
        raise ValueError(f"tile scale s_k={s_k} not in {TILE_SCALES}")
    mask = mask or ScaleMask()
    patch = rng.generator().uniform(-eps_v, eps_v, (PATCH_SIZE, PATCH_SIZE, channels))
    return apply_texture_constraint(TextureUAP(patch.astype(np.float32), s_k, eps_v, mask))


def tile_indices(n: int, s_k: int, patch: int = PATCH_SIZE) -> np.ndarray:
    """Patch row (or column) index feeding each of ``n`` output positions."""
    if n % s_k:
        raise DimensionError(f"size {n} is not divisible by tile scale {s_k}")
    tile = n // s_k
    within = np.arange(n) % tile
    return (within * patch) // tile


def render_patch(patch: np.ndarray, s_k: int, height: int, width: int) -> np.ndarray:
    """Tile ``patch`` as an s_k x s_k grid, each tile nearest-neighbour
    resampled to (height/s_k) x (width/s_k)."""
    patch = as_hwc(patch)
    rows = tile_indices(height, s_k, patch.shape[0])
    cols = tile_indices(width, s_k, patch.shape[1])
    return patch[rows[:, None], cols[None, :]]


def render_uap(uap: TextureUAP, height: int, width: int) -> np.ndarray:
    return render_patch(uap.base_patch, uap.s_k, height, width)


def render_adjoint(grad_image: np.ndarray, s_k: int, patch_shape) -> np.ndarray:
    """Transpose of :func:`render_patch`: scatter-add image gradients back
    onto the patch."""
    grad_image = as_hwc(grad_image)
    h, w, c = grad_image.shape
    rows = tile_indices(h, s_k, patch_shape[0])
    cols = tile_indices(w, s_k, patch_shape[1])
    out = np.zeros((patch_shape[0], patch_shape[1], c))
    np.add.at(out, (rows[:, None], cols[None, :]), grad_image)
    return out


def apply_patch(v: np.ndarray, patch: np.ndarray, s_k: int) -> np.ndarray:
    v = as_hwc(v)
    h, w, _ = v.shape
    delta = render_patch(patch, s_k, h, w)
    if delta.shape[2] != v.shape[2]:
        raise DimensionError(f"patch has {delta.shape[2]} channels, image has {v.shape[2]}")
    return np.clip(v + delta, 0.0, 1.0)


def apply_to_image(v: np.ndarray, uap: TextureUAP) -> np.ndarray:
    return apply_patch(v, uap.base_patch, uap.s_k)


def init_prompt_delta(rng: RngStream, eps_t: float = 0.5, d_t: int = 64) -> PromptDelta:
    if not eps_t > 0:
        raise ValueError("eps_t must be positive")
    vec = rng.generator().normal(0.0, eps_t, d_t).astype(np.float32)
    return PromptDelta(project_l2(vec, eps_t), eps_t)


def zero_prompt_delta(eps_t: float = 0.5, d_t: int = 64) -> PromptDelta:
    return PromptDelta(np.zeros(d_t, dtype=np.float32), eps_t)


def zero_uap(eps_v: float = 8 / 255, s_k: int = 4, mask: ScaleMask | None = None, channels: int = 3):
    patch = np.zeros((PATCH_SIZE, PATCH_SIZE, channels), dtype=np.float32)
    return TextureUAP(patch, s_k, eps_v, mask or ScaleMask())


def apply_to_prompt(e, delta: PromptDelta) -> np.ndarray:
    e = np.asarray(getattr(e, "vector", e), dtype=np.float64)
    if e.shape != delta.vector.shape:
        raise DimensionError(f"embedding shape {e.shape} != delta shape {delta.vector.shape}")
    return e + delta.vector.astype(np.float64)
