"""Zeroth-order gradient estimates from loss queries.

Each single-probe estimate is

    [L(x + eta) - L(x)] / |eta| * eta / |eta|

and K probes share one baseline query, so an estimate costs K + 1 queries.
Image probes are uniform in [-eps_v, eps_v] over the base-patch shape;
prompt probes are Gaussian with std eps_t.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np

from .errors import BudgetExhausted
from .numerics import RngStream
from .perturbation import PromptDelta, TextureUAP, apply_patch, apply_to_prompt


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    direction: np.ndarray
    samples: int
    queries_spent: int
    baseline_loss: float = float("nan")


def uniform_probe(scale: float):
    def draw(gen: np.random.Generator, shape) -> np.ndarray:
        return gen.uniform(-scale, scale, shape)

    return draw


def gaussian_probe(scale: float):
    def draw(gen: np.random.Generator, shape) -> np.ndarray:
        return gen.normal(0.0, scale, shape)

    return draw


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def zo_gradient(
    loss_fn: Callable[[np.ndarray], float],
    x: np.ndarray,
    K: int,
    probe,
    rng: RngStream,
    workers: int = 1,
) -> GradientEstimate:
    """Average of K single-probe estimates around ``x``.

    All probes are drawn up front, so the result does not depend on the
    order in which parallel queries complete.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    gen = rng.generator()
    x = np.asarray(x, dtype=np.float64)
    etas = [probe(gen, x.shape) for _ in range(K)]
    base = loss_fn(x)
    losses = _map(lambda eta: loss_fn(x + eta), etas, workers)
    direction = np.zeros_like(x)
    for eta, val in zip(etas, losses):
        norm = np.linalg.norm(eta)
        if norm > 0:
            direction += (val - base) / norm * (eta / norm)
    direction /= K
    return GradientEstimate(direction, K, K + 1, float(base))


def _require(oracle, n: int) -> None:
    ledger = getattr(oracle, "ledger", None)
    if ledger is not None and ledger.remaining < n:
        raise BudgetExhausted(
            f"estimate needs {n} queries, only {ledger.remaining} remain"
        )


def estimate_grad_image(
    oracle, v, uap: TextureUAP, prompt_vec, target: str, K: int = 10,
    eps_v: float | None = None, rng: RngStream | None = None, workers: int = 1,
) -> GradientEstimate:
    """Gradient of the loss with respect to the base patch (patch space)."""
    _require(oracle, K + 1)
    eps_v = uap.eps_v if eps_v is None else eps_v
    rng = rng or RngStream(0, "img-noise")
    prompt_vec = np.asarray(getattr(prompt_vec, "vector", prompt_vec), dtype=np.float64)

    def loss_fn(patch):
        return oracle.loss(apply_patch(v, patch, uap.s_k), prompt_vec, target)

    return zo_gradient(loss_fn, uap.base_patch, K, uniform_probe(eps_v), rng, workers)


def estimate_grad_text(
    oracle, v_adv, prompt_emb, delta: PromptDelta, target: str, K: int = 10,
    eps_t: float | None = None, rng: RngStream | None = None, workers: int = 1,
) -> GradientEstimate:
    """Gradient of the loss with respect to the prompt offset."""
    _require(oracle, K + 1)
    eps_t = delta.eps_t if eps_t is None else eps_t
    rng = rng or RngStream(0, "txt-noise")
    e = np.asarray(getattr(prompt_emb, "vector", prompt_emb), dtype=np.float64)

    def loss_fn(d):
        return oracle.loss(v_adv, e + d, target)

    return zo_gradient(loss_fn, delta.vector, K, gaussian_probe(eps_t), rng, workers)


@dataclass(frozen=True)
class BatchItem:
    """One (image, prompt) pair; ``key`` identifies it across orderings."""

    key: Hashable
    image: np.ndarray
    prompt_vec: np.ndarray


def _mean_fixed_order(keys, arrays):
    order = sorted(range(len(keys)), key=lambda i: repr(keys[i]))
    total = np.zeros_like(arrays[0])
    for i in order:
        total = total + arrays[i]
    return total / len(arrays)


def batch_estimate(
    oracle,
    batch: Sequence[BatchItem],
    uap: TextureUAP,
    delta: PromptDelta,
    target: str,
    K: int = 10,
    rng: RngStream | None = None,
    *,
    image: bool = True,
    text: bool = True,
    workers: int = 1,
):
    """Per-pair estimates for both modalities, averaged in key order.

    Probe noise is keyed by the pair's ``key``, so reordering the batch
    leaves the result bit-identical. A disabled modality returns ``None``.
    Returns ``(g_v, g_t, mean_baseline_loss)``.
    """
    if not batch:
        raise ValueError("batch is empty")
    rng = rng or RngStream(0, "batch-noise")
    per_pair = (K + 1) * (int(image) + int(text))
    _require(oracle, per_pair * len(batch))

    keys, gv, gt, base = [], [], [], []
    for item in batch:
        keys.append(item.key)
        pair_rng = rng.child(repr(item.key))
        e_adv = apply_to_prompt(item.prompt_vec, delta)
        if image:
            est = estimate_grad_image(
                oracle, item.image, uap, e_adv, target, K,
                rng=pair_rng.child("img-noise"), workers=workers,
            )
            gv.append(est.direction)
            base.append(est.baseline_loss)
        if text:
            v_adv = apply_patch(item.image, uap.base_patch, uap.s_k)
            est = estimate_grad_text(
                oracle, v_adv, item.prompt_vec, delta, target, K,
                rng=pair_rng.child("txt-noise"), workers=workers,
            )
            gt.append(est.direction)
            if not image:
                base.append(est.baseline_loss)

    n = len(batch)
    g_v = GradientEstimate(_mean_fixed_order(keys, gv), K, n * (K + 1)) if image else None
    g_t = GradientEstimate(_mean_fixed_order(keys, gt), K, n * (K + 1)) if text else None
    mean_base = float(_mean_fixed_order(keys, [np.float64(b) for b in base]))
    return g_v, g_t, mean_base
