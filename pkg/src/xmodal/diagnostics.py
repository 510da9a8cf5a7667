"""Estimator-versus-analytic gradient agreement.

These use closed-form or white-box gradients and are never part of the
attack path.
"""

from __future__ import annotations

import numpy as np

from .estimator import gaussian_probe, uniform_probe, zo_gradient
from .numerics import RngStream
from .optimizer import AttackConfig, AttackCorpus
from .perturbation import (
    apply_patch,
    apply_to_prompt,
    init_prompt_delta,
    init_uap,
    render_adjoint,
)
from .victim import ToyVictim, encode_prompt, forward_with_grad


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def quadratic_fidelity(K: int, seeds: int = 200, dim: int = 64, probe: str = "uniform",
                       scale: float = 0.05) -> float:
    """Mean cosine between the query estimate and the exact gradient of
    ``|x - x*|^2`` at random points, over ``seeds`` independent draws."""
    draw = uniform_probe(scale) if probe == "uniform" else gaussian_probe(scale)
    cos = []
    for s in range(seeds):
        gen = RngStream(s, "quadratic-problem").generator()
        x_star = gen.normal(size=dim)
        x = gen.normal(size=dim)

        def loss(z):
            return float(np.sum((z - x_star) ** 2))

        est = zo_gradient(loss, x, K, draw, RngStream(s, f"quadratic-probes/{K}"))
        cos.append(cosine(est.direction, 2 * (x - x_star)))
    return float(np.mean(cos))


def victim_fidelity(
    victim: ToyVictim,
    corpus: AttackCorpus,
    config: AttackConfig,
    K: int,
    seeds: int = 200,
) -> dict[str, float]:
    """Mean cosine between query estimates and white-box gradients on the toy
    victim, for the patch and for the prompt offset."""
    target = config.target_text
    pairs = corpus.train_pairs()
    vecs = [encode_prompt(victim, t).vector for t, _ in corpus.prompts]
    channels = corpus.images[0].shape[2]
    img_cos, txt_cos = [], []
    for s in range(seeds):
        gen = RngStream(s, "oracle-check/pair").generator()
        i, j = pairs[int(gen.integers(len(pairs)))]
        uap = init_uap(RngStream(s, "oracle-check/uap"), config.eps_v, config.s_k, config.mask, channels)
        delta = init_prompt_delta(RngStream(s, "oracle-check/delta"), config.eps_t, len(vecs[j]))
        image = corpus.images[i]
        e_adv = apply_to_prompt(vecs[j], delta)
        v_adv = apply_patch(image, uap.base_patch, uap.s_k)

        _, g_img, g_prompt = forward_with_grad(victim, v_adv, e_adv, target)
        h, w, _ = image.shape
        unclamped = (v_adv > 0.0) & (v_adv < 1.0)
        true_v = render_adjoint(g_img * unclamped, uap.s_k, uap.base_patch.shape)

        est_v = zo_gradient(
            lambda p: victim.loss(apply_patch(image, p, uap.s_k), e_adv, target),
            uap.base_patch, K, uniform_probe(config.eps_v), RngStream(s, f"oracle-check/img/{K}"),
        )
        est_t = zo_gradient(
            lambda d: victim.loss(v_adv, vecs[j] + d, target),
            delta.vector, K, gaussian_probe(config.eps_t), RngStream(s, f"oracle-check/txt/{K}"),
        )
        img_cos.append(cosine(est_v.direction, true_v))
        txt_cos.append(cosine(est_t.direction, g_prompt))
    return {"image": float(np.mean(img_cos)), "text": float(np.mean(txt_cos))}
