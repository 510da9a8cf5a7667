"""Query-only victim interface and a small deterministic vision-language model.

The toy model maps an image and a prompt embedding to a unit-norm output
embedding and "answers" with the closest caption in a fixed bank:

    x  = 8x8 block means of the image, centred at 0.5
    h  = tanh(A x + a)                      image layer
    z  = tanh(F_h h + F_e e + f)            fusion layer
    o  = z / |z|
    P(caption_j) = softmax(C o / tau)_j

Attack code only sees it through :class:`VictimOracle` (loss or text
answers, every call charged to a :class:`QueryLedger`).
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExhausted
from .numerics import RngStream, check_image
from .text import hashed_counts, tokenize

TASKS = ("classification", "captioning", "vqa_general", "vqa_specific")

PROMPT_DIM = 64
HIDDEN_DIM = 64
OUTPUT_DIM = 64
PROMPT_BUCKETS = 256
BLOCK = 8
FAMILY_SEED = 0x5EED

# weight gains; chosen so clean losses sit in a non-saturated range at tau=0.1
IMAGE_GAIN = 4.0
FUSE_IMAGE_GAIN = 3.0
FUSE_PROMPT_GAIN = 1.5
BIAS_STD = 0.5

DEFAULT_CAPTIONS = {
    "classification": [
        "a circle", "a square", "a triangle", "a red object",
        "a blue shape", "a green shape", "an abstract pattern", "a colorful gradient",
    ],
    "captioning": [
        "a red circle on a blue background", "a green square in the corner",
        "several shapes on a gradient", "a yellow triangle above a circle",
        "a dark image with noise", "a bright colorful scene",
        "two overlapping shapes", "a small square near a large circle",
    ],
    "vqa_general": [
        "yes", "no", "I am sorry", "there are two shapes",
        "there is one shape", "there are three shapes", "I do not know", "maybe",
    ],
    "vqa_specific": [
        "the circle is red", "the square is blue", "the triangle is green",
        "it is on the left", "it is on the right", "it is in the center",
        "the shape is yellow", "the color is purple",
    ],
}


# ---------------------------------------------------------------------------
# caption bank


def caption_embedding(text: str, dim: int = OUTPUT_DIM) -> np.ndarray:
    """Fixed hashed-feature embedding used for bank captions (unit norm)."""
    counts = hashed_counts(text, 1024, "bank", trigrams=True)
    proj = _bank_projection(dim)
    v = proj @ counts
    return v / np.linalg.norm(v)


_BANK_PROJ: dict[int, np.ndarray] = {}


def _bank_projection(dim: int) -> np.ndarray:
    if dim not in _BANK_PROJ:
        rng = RngStream(0, f"bank-projection/{dim}").generator()
        _BANK_PROJ[dim] = rng.standard_normal((dim, 1024))
    return _BANK_PROJ[dim]


@dataclass(frozen=True)
class CaptionEntry:
    caption: str
    task: str
    embedding: np.ndarray


class CaptionBank:
    """The victim's discrete output space."""

    def __init__(self, entries: list[CaptionEntry]):
        if not entries:
            raise ValueError("caption bank is empty")
        for e in entries:
            if e.task not in TASKS:
                raise ValueError(f"unknown task label {e.task!r}")
        self.entries = list(entries)
        emb = np.stack([np.asarray(e.embedding, dtype=np.float64) for e in entries])
        if not np.all(np.isfinite(emb)):
            raise ValueError("caption embeddings must be finite")
        self.embeddings = emb
        self.captions = [e.caption for e in entries]

    @classmethod
    def from_captions(cls, pairs, dim: int = OUTPUT_DIM) -> "CaptionBank":
        return cls([CaptionEntry(c, t, caption_embedding(c, dim)) for t, c in pairs])

    def __len__(self) -> int:
        return len(self.entries)

    def index_of(self, caption: str) -> int:
        try:
            return self.captions.index(caption)
        except ValueError:
            raise KeyError(f"target {caption!r} is not in the caption bank") from None

    def validate(self, target: str | None = None, per_task: int = 8) -> None:
        """Check the full bank invariants (the constructor only checks shape)."""
        for task in TASKS:
            n = sum(e.task == task for e in self.entries)
            if n < per_task:
                raise ValueError(f"task {task!r} has {n} captions, need >= {per_task}")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("caption embeddings must be unit norm")
        if target is not None:
            self.index_of(target)


def default_caption_bank() -> CaptionBank:
    return CaptionBank.from_captions(
        [(task, cap) for task in TASKS for cap in DEFAULT_CAPTIONS[task]]
    )


# ---------------------------------------------------------------------------
# prompt embeddings and the model


@dataclass(frozen=True)
class PromptEmbedding:
    vector: np.ndarray
    source_text: str


def _vec(e) -> np.ndarray:
    return np.asarray(getattr(e, "vector", e), dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ToyVictim:
    seed: int
    tau: float
    bank: CaptionBank
    image_shape: tuple[int, int, int]
    family_share: float
    A: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)
    F_h: np.ndarray = field(repr=False)
    F_e: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)
    P: np.ndarray = field(repr=False)

    @property
    def prompt_dim(self) -> int:
        return self.P.shape[0]

    def _check_inputs(self, image, e):
        image = check_image(image)
        if image.shape != self.image_shape:
            raise ValueError(f"image shape {image.shape} != victim input {self.image_shape}")
        e = _vec(e)
        if e.shape != (self.prompt_dim,):
            raise ValueError(f"prompt embedding has shape {e.shape}, expected ({self.prompt_dim},)")
        return image, e

    def _features(self, image: np.ndarray) -> np.ndarray:
        h, w, c = image.shape
        blocks = image.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK, c).sum(1).sum(2)
        return blocks.reshape(-1) / (BLOCK * BLOCK) - 0.5

    def output_embedding(self, image, e) -> np.ndarray:
        image, e = self._check_inputs(image, e)
        return self._forward(image, e)["o"]

    def _forward(self, image, e) -> dict:
        x = self._features(image)
        h = np.tanh(self.A @ x + self.a)
        z = np.tanh(self.F_h @ h + self.F_e @ e + self.f)
        zn = np.linalg.norm(z)
        o = z / zn
        logits = self.bank.embeddings @ o / self.tau
        shifted = logits - logits.max()
        log_p = shifted - np.log(np.exp(shifted).sum())
        return dict(x=x, h=h, z=z, zn=zn, o=o, logits=logits, log_p=log_p)

    def probabilities(self, image, e) -> np.ndarray:
        image, e = self._check_inputs(image, e)
        return np.exp(self._forward(image, e)["log_p"])

    def loss(self, image, e, target: str) -> float:
        """-log P(target | image, e), without touching any ledger."""
        idx = self.bank.index_of(target)
        image, e = self._check_inputs(image, e)
        return float(-self._forward(image, e)["log_p"][idx])

    def answer(self, image, e) -> str:
        image, e = self._check_inputs(image, e)
        logits = self._forward(image, e)["logits"]
        # np.argmax returns the first maximum, i.e. the lowest bank index on ties
        return self.bank.captions[int(np.argmax(logits))]


def build_toy_victim(
    seed: int,
    tau: float = 0.1,
    bank: CaptionBank | None = None,
    image_shape=(64, 64, 3),
    family_share: float = 0.5,
) -> ToyVictim:
    """Construct a victim whose every parameter is a function of ``seed``.

    Weights mix a seed-independent family component with a seed-specific one
    (``family_share`` of the variance is shared), mimicking model families
    built on a common backbone.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if not 0.0 <= family_share <= 1.0:
        raise ValueError("family_share must lie in [0, 1]")
    if bank is None:
        bank = default_caption_bank()
    if len(bank) == 0:
        raise ValueError("caption bank is empty")
    h, w, c = image_shape
    if h % BLOCK or w % BLOCK:
        raise ValueError(f"image sides must be multiples of {BLOCK}")
    n_feat = (h // BLOCK) * (w // BLOCK) * c
    shapes = {
        "A": ((HIDDEN_DIM, n_feat), IMAGE_GAIN / np.sqrt(n_feat)),
        "a": ((HIDDEN_DIM,), BIAS_STD),
        "F_h": ((OUTPUT_DIM, HIDDEN_DIM), FUSE_IMAGE_GAIN / np.sqrt(HIDDEN_DIM)),
        "F_e": ((OUTPUT_DIM, PROMPT_DIM), FUSE_PROMPT_GAIN),
        "f": ((OUTPUT_DIM,), BIAS_STD),
        "P": ((PROMPT_DIM, PROMPT_BUCKETS), 1.0),
    }
    fam = RngStream(FAMILY_SEED, f"victim-family/{h}x{w}x{c}").generator()
    own = RngStream(seed, f"victim/{h}x{w}x{c}").generator()
    s_fam, s_own = np.sqrt(family_share), np.sqrt(1.0 - family_share)
    params = {}
    for name, (shape, std) in shapes.items():
        w_fam = fam.standard_normal(shape)
        w_own = own.standard_normal(shape)
        params[name] = std * (s_fam * w_fam + s_own * w_own)
    return ToyVictim(
        seed=int(seed), tau=float(tau), bank=bank, image_shape=tuple(image_shape),
        family_share=float(family_share), **params,
    )


def encode_prompt(victim: ToyVictim, prompt: str) -> PromptEmbedding:
    if not tokenize(prompt):
        raise ValueError("prompt is empty")
    counts = hashed_counts(prompt, PROMPT_BUCKETS, "prompt")
    v = victim.P @ counts
    return PromptEmbedding(v / np.linalg.norm(v), prompt)


def forward_with_grad(victim: ToyVictim, image, prompt_emb, target: str):
    """White-box hook for tests and diagnostics: loss and analytic gradients
    with respect to the image pixels and the prompt embedding."""
    idx = victim.bank.index_of(target)
    image, e = victim._check_inputs(image, prompt_emb)
    c = victim._forward(image, e)
    p = np.exp(c["log_p"])
    d_logits = p.copy()
    d_logits[idx] -= 1.0
    d_o = victim.bank.embeddings.T @ d_logits / victim.tau
    o = c["o"]
    d_z = (d_o - o * (o @ d_o)) / c["zn"]
    d_pre = d_z * (1.0 - c["z"] ** 2)
    grad_prompt = victim.F_e.T @ d_pre
    d_h = victim.F_h.T @ d_pre
    d_x = victim.A.T @ (d_h * (1.0 - c["h"] ** 2))
    hh, ww, ch = image.shape
    d_blocks = d_x.reshape(hh // BLOCK, 1, ww // BLOCK, 1, ch) / (BLOCK * BLOCK)
    grad_image = np.broadcast_to(
        d_blocks, (hh // BLOCK, BLOCK, ww // BLOCK, BLOCK, ch)
    ).reshape(hh, ww, ch)
    return float(-c["log_p"][idx]), grad_image.copy(), grad_prompt


# ---------------------------------------------------------------------------
# query accounting and oracles


class QueryLedger:
    """Counts oracle queries against a hard budget. Thread-safe."""

    def __init__(self, budget: int = 70_000):
        if budget < 0:
            raise ValueError("budget must be nonnegative")
        self.budget = int(budget)
        self.used = 0
        self._lock = threading.Lock()

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    def charge(self, n: int = 1) -> None:
        with self._lock:
            if self.used + n > self.budget:
                raise BudgetExhausted(
                    f"query budget exhausted: used {self.used} of {self.budget}, requested {n}"
                )
            self.used += n

    def __repr__(self) -> str:
        return f"QueryLedger(used={self.used}, budget={self.budget})"


def query_loss(victim: ToyVictim, image, prompt_emb, target: str, ledger: QueryLedger) -> float:
    victim.bank.index_of(target)
    ledger.charge()
    return victim.loss(image, prompt_emb, target)


def query_text(victim: ToyVictim, image, prompt_emb, ledger: QueryLedger) -> str:
    ledger.charge()
    return victim.answer(image, prompt_emb)


class VictimOracle:
    """Soft black-box access: scalar loss or answer text per query."""

    def __init__(self, victim: ToyVictim, ledger: QueryLedger):
        self.victim = victim
        self.ledger = ledger

    def loss(self, image, prompt_emb, target: str) -> float:
        return query_loss(self.victim, image, prompt_emb, target, self.ledger)

    def text(self, image, prompt_emb) -> str:
        return query_text(self.victim, image, prompt_emb, self.ledger)


class TextSurrogateOracle(VictimOracle):
    """Strict black-box access: only answer text is observed.

    ``loss`` returns ``1 - similarity(answer, target)`` under an external
    text embedder plus Gaussian smoothing noise of std ``sigma``. The noise
    is keyed by the query content, so it does not depend on query order.
    """

    def __init__(self, victim, ledger, embedder, sigma: float = 0.01, seed: int = 0):
        super().__init__(victim, ledger)
        self.embedder = embedder
        self.sigma = float(sigma)
        self.seed = int(seed)

    def loss(self, image, prompt_emb, target: str) -> float:
        answer = self.text(image, prompt_emb)
        h = hashlib.blake2b(digest_size=16)
        h.update(np.ascontiguousarray(image, dtype=np.float64).tobytes())
        h.update(_vec(prompt_emb).tobytes())
        noise = RngStream(self.seed, "surrogate/" + h.hexdigest()).generator().standard_normal()
        return 1.0 - self.embedder.similarity(answer, target) + self.sigma * noise
