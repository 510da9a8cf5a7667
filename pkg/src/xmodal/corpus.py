"""Seeded synthetic image/prompt corpus."""

from __future__ import annotations

import numpy as np

from .numerics import DimensionError, RngStream
from .optimizer import AttackCorpus
from .victim import TASKS

SHAPES = ("circle", "square", "triangle")
COLORS = {
    "red": (0.9, 0.15, 0.1),
    "green": (0.1, 0.75, 0.2),
    "blue": (0.15, 0.25, 0.9),
    "yellow": (0.95, 0.85, 0.1),
    "purple": (0.6, 0.2, 0.7),
    "white": (0.95, 0.95, 0.95),
}

TEMPLATES = {
    "classification": [
        "What is this?", "What object is shown?", "Classify the main object.",
        "Name the main shape.",
    ],
    "captioning": [
        "Describe the image.", "Write a short caption.", "What does this picture show?",
        "Give a brief description.",
    ],
    "vqa_general": [
        "Is there a {shape}?", "How many shapes are there?", "Is the background bright?",
        "Are there any {shape}s?",
    ],
    "vqa_specific": [
        "What color is the {shape}?", "Where is the {shape}?", "How big is the {shape}?",
        "Is the {shape} {color}?",
    ],
}


def _draw_shape(img, gen, kind, color):
    h, w, _ = img.shape
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = gen.uniform(0.2, 0.8) * h, gen.uniform(0.2, 0.8) * w
    r = gen.uniform(0.1, 0.25) * min(h, w)
    if kind == "circle":
        sel = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    elif kind == "square":
        sel = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    else:
        sel = (yy >= cy - r) & (yy <= cy + r) & (np.abs(xx - cx) <= (yy - (cy - r)) / 2)
    img[sel] = color


def _make_image(gen: np.random.Generator, h: int, w: int) -> np.ndarray:
    c0, c1 = gen.uniform(0.0, 1.0, 3), gen.uniform(0.0, 1.0, 3)
    angle = gen.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    t = (np.cos(angle) * xx / w + np.sin(angle) * yy / h)
    t = (t - t.min()) / max(np.ptp(t), 1e-12)
    img = c0 * (1 - t[..., None]) + c1 * t[..., None]
    names = list(COLORS)
    for _ in range(gen.integers(1, 4)):
        kind = SHAPES[gen.integers(len(SHAPES))]
        color = np.array(COLORS[names[gen.integers(len(names))]])
        _draw_shape(img, gen, kind, color)
    img += gen.normal(0.0, gen.uniform(0.0, 0.05), img.shape)
    return np.clip(img, 0.0, 1.0)


def _split(n: int, frac: float) -> tuple[list[int], list[int]]:
    n_train = min(n, max(1, int(round(n * frac))))
    return list(range(n_train)), list(range(n_train, n))


def gen_corpus(
    seed: int,
    n_images: int = 16,
    m_prompts: int = 8,
    dims=(64, 64, 3),
    image_train_frac: float = 0.5,
    prompt_train_frac: float = 0.5,
) -> AttackCorpus:
    """Procedural images (gradient background, shapes, noise) and templated
    prompts assigned round-robin over the four task labels.

    Prompts are split per task, so every task with two or more prompts is
    represented on both sides of the split.
    """
    h, w, c = dims
    for axis, n in (("height", h), ("width", w)):
        if n < 8 or n & (n - 1):
            raise DimensionError(f"{axis}={n} is not a power of two >= 8")
    if c != 3:
        raise DimensionError("synthetic corpus images have 3 channels")
    if n_images < 1 or m_prompts < 1:
        raise ValueError("corpus needs at least one image and one prompt")
    gen = RngStream(seed, "corpus").generator()
    images = [_make_image(gen, h, w) for _ in range(n_images)]

    prompts = []
    for i in range(m_prompts):
        task = TASKS[i % len(TASKS)]
        templates = TEMPLATES[task]
        text = templates[gen.integers(len(templates))].format(
            shape=SHAPES[gen.integers(len(SHAPES))],
            color=list(COLORS)[gen.integers(len(COLORS))],
        )
        prompts.append((text, task))

    train_img, held_img = _split(n_images, image_train_frac)
    train_p, held_p = [], []
    for task in TASKS:
        idx = [i for i, (_, t) in enumerate(prompts) if t == task]
        if len(idx) == 1:
            train_p += idx
        elif idx:
            k = min(len(idx) - 1, max(1, int(round(len(idx) * prompt_train_frac))))
            train_p += idx[:k]
            held_p += idx[k:]
    return AttackCorpus(images, prompts, train_img, sorted(train_p), held_img, sorted(held_p))
