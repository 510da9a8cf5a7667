"""Held-out evaluation, transfer matrices, ablations and the tile-scale sweep."""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Sequence

import numpy as np

from ..optimizer import AttackConfig, AttackCorpus, AttackResult, run_attack
from ..perturbation import PromptDelta, TextureUAP, apply_to_image, apply_to_prompt
from ..perturbation import TILE_SCALES
from ..victim import TASKS, QueryLedger, TextSurrogateOracle, ToyVictim, VictimOracle, encode_prompt
from .defense import DefenseSpec, defend
from .embedder import EvalEmbedder, default_embedder
from .report import AttackReport

log = logging.getLogger(__name__)

ABLATION_MODES = ("full", "no_text", "no_image", "no_joint")


def evaluate(
    victim: ToyVictim,
    uap: TextureUAP,
    delta: PromptDelta,
    corpus: AttackCorpus,
    target: str = "I am sorry",
    theta: float = 0.55,
    *,
    embedder: EvalEmbedder | None = None,
    defense: DefenseSpec | None = None,
    pairs=None,
    label: str = "",
) -> AttackReport:
    """Query clean and attacked answers on the held-out pairs and score their
    similarity to ``target``. Uses its own ledger, sized to exactly two
    queries per pair."""
    embedder = embedder or default_embedder()
    pairs = corpus.heldout_pairs() if pairs is None else list(pairs)
    if not pairs:
        raise ValueError("no held-out pairs to evaluate")
    ledger = QueryLedger(2 * len(pairs))
    oracle = VictimOracle(victim, ledger)
    vecs = {j: encode_prompt(victim, corpus.prompts[j][0]).vector for _, j in pairs}

    clean_sims: dict[str, list[float]] = {t: [] for t in TASKS}
    adv_sims: dict[str, list[float]] = {t: [] for t in TASKS}
    for n, (i, j) in enumerate(pairs):
        task = corpus.prompts[j][1]
        image = corpus.images[i]
        attacked = apply_to_image(image, uap)
        if defense is not None:
            image = defend(image, defense, draw=2 * n)
            attacked = defend(attacked, defense, draw=2 * n + 1)
        clean_out = oracle.text(image, vecs[j])
        adv_out = oracle.text(attacked, apply_to_prompt(vecs[j], delta))
        clean_sims[task].append(embedder.similarity(clean_out, target))
        adv_sims[task].append(embedder.similarity(adv_out, target))

    def means(d):
        return {t: float(np.mean(v)) for t, v in d.items() if v}

    def asr(d):
        flat = [s for t in TASKS for s in d[t]]
        return sum(s >= theta for s in flat) / len(flat)

    return AttackReport(
        clean=means(clean_sims), attacked=means(adv_sims),
        clean_asr=asr(clean_sims), asr=asr(adv_sims), theta=theta,
        queries=ledger.used, pairs=len(pairs), label=label,
        counts={t: len(v) for t, v in adv_sims.items() if v},
    )


def transfer_eval(
    uap: TextureUAP,
    delta: PromptDelta,
    victims: Sequence[ToyVictim],
    corpora: Sequence[AttackCorpus],
    target: str = "I am sorry",
    theta: float = 0.55,
    embedder: EvalEmbedder | None = None,
) -> list[list[AttackReport]]:
    """One perturbation pair evaluated on every (victim, corpus) combination.
    Rows follow ``victims``, columns follow ``corpora``."""
    return [
        [
            evaluate(v, uap, delta, c, target, theta, embedder=embedder,
                     label=f"victim={v.seed} corpus={k}")
            for k, c in enumerate(corpora)
        ]
        for v in victims
    ]


def attack_victim(
    victim: ToyVictim,
    corpus: AttackCorpus,
    config: AttackConfig,
    workers: int = 1,
    oracle_mode: str = "loss",
) -> AttackResult:
    """Run the attack against ``victim`` through a fresh, budgeted oracle.

    ``oracle_mode="text"`` restricts the attacker to answer texts scored by
    the evaluation embedder (with ``config.sigma`` smoothing noise).
    """
    victim.bank.index_of(config.target_text)
    prompt_vecs = [encode_prompt(victim, text).vector for text, _ in corpus.prompts]
    ledger = QueryLedger(config.query_budget)
    if oracle_mode == "loss":
        oracle = VictimOracle(victim, ledger)
    elif oracle_mode == "text":
        oracle = TextSurrogateOracle(victim, ledger, default_embedder(), config.sigma, config.seed)
    else:
        raise ValueError(f"unknown oracle mode {oracle_mode!r}")
    return run_attack(oracle, corpus, config, prompt_vecs, victim=victim, workers=workers)


def ablation_config(config: AttackConfig, mode: str) -> AttackConfig:
    """Config for one ablation mode. Every mode keeps the full mode's budget
    cap and iteration count, so a frozen modality does not buy extra steps."""
    if mode not in ABLATION_MODES:
        raise ValueError(f"unknown ablation mode {mode!r}")
    iterations = config.query_budget // config.iteration_cost
    if config.max_iterations is not None:
        iterations = min(iterations, config.max_iterations)
    base = replace(config, max_iterations=iterations)
    if mode == "no_text":
        return replace(base, optimize_text=False)
    if mode == "no_image":
        return replace(base, optimize_image=False)
    if mode == "no_joint":
        return replace(base, lam=0.0)
    return base


def ablate(
    victim: ToyVictim,
    corpus: AttackCorpus,
    config: AttackConfig,
    modes: Sequence[str] = ABLATION_MODES,
    *,
    embedder: EvalEmbedder | None = None,
    workers: int = 1,
    oracle_mode: str = "loss",
):
    """Run the attack once per mode from identical seeds and budgets.

    Returns ``{mode: (AttackReport, AttackResult)}``.
    """
    out = {}
    for mode in modes:
        cfg = ablation_config(config, mode)
        result = attack_victim(victim, corpus, cfg, workers, oracle_mode)
        report = evaluate(victim, result.uap, result.delta, corpus, cfg.target_text,
                          cfg.theta, embedder=embedder, label=f"mode={mode}")
        out[mode] = (report, result)
    return out


def sweep_tile_scale(
    victim: ToyVictim,
    corpus: AttackCorpus,
    config: AttackConfig,
    scales: Sequence[int] = TILE_SCALES,
    *,
    embedder: EvalEmbedder | None = None,
    workers: int = 1,
    oracle_mode: str = "loss",
):
    """Attack and evaluate once per tile scale. Returns ``{s_k: (report, result)}``."""
    out = {}
    for s_k in scales:
        cfg = replace(config, s_k=s_k)
        result = attack_victim(victim, corpus, cfg, workers, oracle_mode)
        report = evaluate(victim, result.uap, result.delta, corpus, cfg.target_text,
                          cfg.theta, embedder=embedder, label=f"s_k={s_k}")
        out[s_k] = (report, result)
    return out
