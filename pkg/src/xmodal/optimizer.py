"""The joint black-box attack loop.

Each iteration samples a batch of (image, prompt) pairs, estimates both
gradients from queries, couples them through a cross-modal alignment term,
and takes a sign-PGD step on the patch and a normalised PGD step on the
prompt offset before re-applying the texture constraint.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import BudgetExhausted
from .estimator import BatchItem, GradientEstimate, batch_estimate
from .numerics import RngStream, ScaleMask, apply_scale_mask, haar_dwt2, project_l2, project_linf
from .perturbation import (
    PromptDelta,
    TextureUAP,
    apply_patch,
    apply_texture_constraint,
    apply_to_prompt,
    init_prompt_delta,
    init_uap,
    zero_prompt_delta,
    zero_uap,
)
from .victim import QueryLedger, ToyVictim, VictimOracle

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-6


@dataclass(frozen=True)
class AttackConfig:
    eps_v: float = 8 / 255
    eps_t: float = 0.5
    alpha_v: float = 0.01
    alpha_t: float = 0.005
    lam: float = 0.1
    K: int = 10
    batch: int = 16
    s_k: int = 4
    query_budget: int = 70_000
    theta: float = 0.55
    sigma: float = 0.01
    seed: int = 0
    target_text: str = "I am sorry"
    mask: ScaleMask = field(default_factory=ScaleMask)
    common_dim: int = 128
    targeted: bool = True
    optimize_image: bool = True
    optimize_text: bool = True
    max_iterations: int | None = None

    def __post_init__(self):
        for name in ("eps_v", "eps_t", "alpha_v", "alpha_t", "K", "batch", "common_dim"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.query_budget < 0:
            raise ValueError("query_budget must be nonnegative")

    @property
    def iteration_cost(self) -> int:
        modalities = int(self.optimize_image) + int(self.optimize_text)
        return self.batch * modalities * (self.K + 1)


@dataclass
class AttackCorpus:
    images: list[np.ndarray]
    prompts: list[tuple[str, str]]  # (text, task)
    train_images: list[int]
    train_prompts: list[int]
    heldout_images: list[int]
    heldout_prompts: list[int]

    def __post_init__(self):
        if not self.train_images or not self.train_prompts:
            raise ValueError("train split needs at least one image and one prompt")
        if set(self.train_images) & set(self.heldout_images):
            raise ValueError("image splits overlap")
        if set(self.train_prompts) & set(self.heldout_prompts):
            raise ValueError("prompt splits overlap")

    def train_pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i in self.train_images for j in self.train_prompts]

    def heldout_pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i in self.heldout_images for j in self.heldout_prompts]


@dataclass
class TraceRecord:
    iteration: int
    loss: float
    r_hat: float
    queries: int
    linf: float
    l2: float
    text_skipped: bool = False


@dataclass
class AttackTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.queries <= self.records[-1].queries:
            raise ValueError("trace queries must strictly increase")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "r_hat", "queries", "linf", "l2", "text_skipped"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.loss), repr(r.r_hat), r.queries,
                            repr(r.linf), repr(r.l2), int(r.text_skipped)])


@dataclass
class AttackState:
    uap: TextureUAP
    delta: PromptDelta
    iteration: int = 0


@dataclass
class AttackResult:
    uap: TextureUAP
    delta: PromptDelta
    trace: AttackTrace
    queries_used: int
    exhausted: bool
    initial_train_loss: float
    final_train_loss: float

    def __iter__(self):
        return iter((self.uap, self.delta, self.trace))


# ---------------------------------------------------------------------------
# cross-modal alignment


class AlignmentProjector:
    """Fixed random maps of both gradients into a shared ``d_c``-dim space."""

    def __init__(self, patch_size: int, prompt_dim: int, proj_seed: int, d_c: int = 128):
        gen = RngStream(proj_seed, "alignment-projection").generator()
        scale = 1.0 / np.sqrt(d_c)
        self.U = gen.normal(0.0, scale, (d_c, patch_size))
        self.V = gen.normal(0.0, scale, (d_c, prompt_dim))


_PROJECTORS: dict[tuple, AlignmentProjector] = {}


def _projector(patch_size, prompt_dim, proj_seed, d_c) -> AlignmentProjector:
    key = (patch_size, prompt_dim, proj_seed, d_c)
    if key not in _PROJECTORS:
        _PROJECTORS.clear()
        _PROJECTORS[key] = AlignmentProjector(*key)
    return _PROJECTORS[key]


def _unit(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x)
    return x / n if n > 0 else np.zeros_like(x)


def cross_modal_alignment(g_v, g_t, proj_seed: int, d_c: int = 128):
    """Return ``(r_hat, coupled_v, coupled_t)``.

    ``r_hat = 1 - cos(U g_v, V g_t)`` lies in [0, 2]; each coupling is the
    other modality's projected direction pulled back into this modality's
    space.
    """
    gv = np.asarray(getattr(g_v, "direction", g_v), dtype=np.float64)
    gt = np.asarray(getattr(g_t, "direction", g_t), dtype=np.float64)
    if not np.any(gv) or not np.any(gt):
        return 0.0, np.zeros_like(gv), np.zeros_like(gt)
    proj = _projector(gv.size, gt.size, proj_seed, d_c)
    pv = proj.U @ gv.reshape(-1)
    pt = proj.V @ gt
    cos = float(_unit(pv) @ _unit(pt))
    r_hat = float(np.clip(1.0 - cos, 0.0, 2.0))
    coupled_v = (proj.U.T @ _unit(pt)).reshape(gv.shape)
    coupled_t = proj.V.T @ _unit(pv)
    return r_hat, coupled_v, coupled_t


# ---------------------------------------------------------------------------
# update step


def joint_step(state: AttackState, config: AttackConfig, g_v, g_t, coupled=None):
    """One PGD update of both perturbations.

    ``coupled`` is ``(coupled_v, coupled_t)`` from :func:`cross_modal_alignment`;
    it is ignored when ``config.lam == 0``. Either gradient may be ``None``
    to leave that perturbation untouched. Returns ``(state', text_skipped)``.
    """
    sign = 1.0 if config.targeted else -1.0
    uap, delta = state.uap, state.delta
    text_skipped = False

    if g_v is not None:
        gv = np.asarray(getattr(g_v, "direction", g_v), dtype=np.float64)
        d_v = gv
        if config.lam > 0 and coupled is not None:
            d_v = gv + config.lam * np.linalg.norm(gv) * _unit(coupled[0])
        stepped = uap.base_patch - config.alpha_v * sign * np.sign(d_v)
        uap = uap.with_patch(project_linf(stepped.astype(np.float32), uap.eps_v))
        uap = apply_texture_constraint(uap)

    if g_t is not None:
        gt = np.asarray(getattr(g_t, "direction", g_t), dtype=np.float64)
        d_t = gt
        if config.lam > 0 and coupled is not None:
            d_t = gt + config.lam * np.linalg.norm(gt) * _unit(coupled[1])
        norm = np.linalg.norm(d_t)
        if norm > 0:
            stepped = delta.vector - config.alpha_t * sign * d_t / norm
            delta = replace(delta, vector=project_l2(stepped.astype(np.float32), delta.eps_t))
        else:
            text_skipped = True

    return AttackState(uap, delta, state.iteration + 1), text_skipped


# ---------------------------------------------------------------------------
# the loop


def mean_loss(victim: ToyVictim, corpus: AttackCorpus, pairs, prompt_vecs, uap, delta, target) -> float:
    """Diagnostic mean loss over ``pairs``; charged to a private ledger."""
    ledger = QueryLedger(len(pairs))
    oracle = VictimOracle(victim, ledger)
    total = 0.0
    for i, j in pairs:
        v_adv = apply_patch(corpus.images[i], uap.base_patch, uap.s_k)
        total += oracle.loss(v_adv, apply_to_prompt(prompt_vecs[j], delta), target)
    return total / len(pairs)


def check_feasible(uap: TextureUAP, delta: PromptDelta) -> None:
    linf = float(np.max(np.abs(uap.base_patch)))
    if linf > uap.eps_v + FEASIBILITY_TOL:
        raise AssertionError(f"patch l-inf {linf} exceeds {uap.eps_v}")
    l2 = float(np.linalg.norm(delta.vector))
    if l2 > delta.eps_t + FEASIBILITY_TOL:
        raise AssertionError(f"prompt delta l2 {l2} exceeds {delta.eps_t}")


def run_attack(
    oracle,
    corpus: AttackCorpus,
    config: AttackConfig,
    prompt_vecs: Sequence[np.ndarray],
    *,
    victim: ToyVictim | None = None,
    workers: int = 1,
) -> AttackResult:
    """Optimise a universal (patch, prompt offset) pair until the budget runs out.

    ``prompt_vecs[j]`` is the victim's embedding of ``corpus.prompts[j]``.
    When ``victim`` is given, full-train-split losses before and after the
    attack are measured on a separate diagnostic ledger.
    """
    cost = config.iteration_cost
    ledger = oracle.ledger
    if ledger.remaining < cost:
        raise BudgetExhausted(
            f"budget {ledger.remaining} cannot cover one iteration ({cost} queries)"
        )
    root = RngStream(config.seed, "attack")
    channels = corpus.images[0].shape[2]
    d_t = len(prompt_vecs[0])
    if config.optimize_image:
        uap = init_uap(RngStream(config.seed, "uap-init"), config.eps_v, config.s_k, config.mask, channels)
    else:
        uap = zero_uap(config.eps_v, config.s_k, config.mask, channels)
    if config.optimize_text:
        delta = init_prompt_delta(RngStream(config.seed, "txt-init"), config.eps_t, d_t)
    else:
        delta = zero_prompt_delta(config.eps_t, d_t)
    state = AttackState(uap, delta)

    train = corpus.train_pairs()
    initial = final = float("nan")
    if victim is not None:
        initial = mean_loss(victim, corpus, train, prompt_vecs, uap, delta, config.target_text)

    batch_gen = root.child("batch").generator()
    trace = AttackTrace()
    exhausted = False
    # with both modalities frozen there is nothing to update
    while cost > 0:
        if ledger.remaining < cost:
            exhausted = True
            break
        if config.max_iterations is not None and state.iteration >= config.max_iterations:
            break
        it = state.iteration
        picks = batch_gen.integers(0, len(train), config.batch)
        batch = [
            BatchItem((it, int(n), train[n]), corpus.images[train[n][0]], prompt_vecs[train[n][1]])
            for n in picks
        ]
        g_v, g_t, loss = batch_estimate(
            oracle, batch, state.uap, state.delta, config.target_text, config.K,
            root.child(f"iter-{it}"), image=config.optimize_image,
            text=config.optimize_text, workers=workers,
        )
        r_hat, coupled = 0.0, None
        if g_v is not None and g_t is not None:
            r_hat, cv, ct = cross_modal_alignment(g_v, g_t, config.seed, config.common_dim)
            coupled = (cv, ct)
        state, skipped = joint_step(state, config, g_v, g_t, coupled)
        check_feasible(state.uap, state.delta)
        trace.append(TraceRecord(
            it, loss, r_hat, ledger.used,
            float(np.max(np.abs(state.uap.base_patch))),
            float(np.linalg.norm(state.delta.vector)), skipped,
        ))
    if victim is not None:
        final = mean_loss(victim, corpus, train, prompt_vecs, state.uap, state.delta, config.target_text)
    log.info("attack finished: %d iterations, %d queries", len(trace), ledger.used)
    return AttackResult(state.uap, state.delta, trace, ledger.used, exhausted, initial, final)


def dropped_band_energy(uap: TextureUAP) -> float:
    """Largest coefficient magnitude in subbands the mask drops."""
    pyr = haar_dwt2(uap.base_patch, uap.levels)
    dropped = 0.0
    if not uap.mask.keep_approx:
        dropped = float(np.max(np.abs(pyr.approx)))
    for bands, keep in zip(pyr.details, uap.mask.keep_detail):
        if not keep:
            dropped = max(dropped, max(float(np.max(np.abs(b))) for b in bands))
    return dropped
