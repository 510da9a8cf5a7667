import threading

import numpy as np
import pytest
from scipy.optimize import minimize

from xmodal.corpus import gen_corpus
from xmodal.errors import BudgetExhausted
from xmodal.evaluation import EvalEmbedder
from xmodal.victim import (
    TASKS,
    CaptionBank,
    CaptionEntry,
    QueryLedger,
    TextSurrogateOracle,
    VictimOracle,
    build_toy_victim,
    default_caption_bank,
    encode_prompt,
    forward_with_grad,
    query_loss,
    query_text,
)

TARGET = "I am sorry"
# mean clean loss of the target over all 16 x 8 pairs of corpus seed 0 on
# victim seed 1, frozen from the calibration run
CLEAN_MEAN_LOSS = 3.8878446606750785


@pytest.fixture(scope="module")
def victim():
    return build_toy_victim(1)


@pytest.fixture(scope="module")
def corpus():
    return gen_corpus(0)


def random_inputs(victim, n, seed=0):
    gen = np.random.default_rng(seed)
    for _ in range(n):
        img = gen.random(victim.image_shape)
        e = gen.normal(size=victim.prompt_dim)
        yield img, e / np.linalg.norm(e)


def test_default_bank_invariants():
    bank = default_caption_bank()
    bank.validate(TARGET)
    assert len(bank) == 32
    for task in TASKS:
        assert sum(e.task == task for e in bank.entries) == 8


def test_same_seed_same_answers(victim):
    other = build_toy_victim(1)
    for img, e in random_inputs(victim, 100):
        assert victim.answer(img, e) == other.answer(img, e)


def test_different_seeds_differ(victim):
    other = build_toy_victim(2)
    differ = sum(victim.answer(i, e) != other.answer(i, e) for i, e in random_inputs(victim, 100))
    assert differ >= 1


def test_encode_prompt(victim):
    a = encode_prompt(victim, "What is this?")
    b = encode_prompt(victim, "What is this?")
    assert np.array_equal(a.vector, b.vector)
    assert np.linalg.norm(a.vector) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        encode_prompt(victim, "   ")


def test_one_token_changes_embedding(victim, corpus):
    for text, _ in corpus.prompts:
        assert not np.array_equal(
            encode_prompt(victim, text).vector, encode_prompt(victim, text + " now").vector
        )


def test_answer_minimises_loss(victim):
    for img, e in random_inputs(victim, 20, seed=1):
        ans = victim.answer(img, e)
        losses = [victim.loss(img, e, c) for c in victim.bank.captions]
        assert victim.loss(img, e, ans) == min(losses)


def test_clean_loss_regression(victim, corpus):
    vecs = [encode_prompt(victim, t) for t, _ in corpus.prompts]
    losses = [victim.loss(im, e, TARGET) for im in corpus.images for e in vecs]
    assert float(np.mean(losses)) == pytest.approx(CLEAN_MEAN_LOSS, abs=1e-9)
    assert 1.0 <= CLEAN_MEAN_LOSS <= 6.0


def test_degenerate_bank_is_uniform():
    emb = np.eye(64)[0]
    bank = CaptionBank([CaptionEntry(f"c{i}", TASKS[i % 4], emb) for i in range(10)])
    v = build_toy_victim(3, bank=bank)
    img, e = next(random_inputs(v, 1))
    assert v.loss(img, e, "c4") == pytest.approx(np.log(10), abs=1e-12)


def test_tie_breaks_to_lowest_index():
    base = default_caption_bank()
    entries = list(base.entries)
    entries[5] = CaptionEntry("dup", entries[5].task, entries[2].embedding)
    bank = CaptionBank(entries)
    v = build_toy_victim(1, bank=bank)
    e = np.zeros(v.prompt_dim)
    img = np.full(v.image_shape, 0.5)
    # steer the output towards entry 2 so the tied pair is the maximum
    res = minimize(lambda x: forward_with_grad(v, img, x, entries[2].caption)[::2],
                   e, jac=True, method="L-BFGS-B", options={"maxiter": 200})
    logits = bank.embeddings @ v.output_embedding(img, res.x)
    assert logits[2] == logits[5] == logits.max()
    assert v.answer(img, res.x) == entries[2].caption


def test_engineered_entry(victim, corpus):
    target = victim.bank.captions[3]
    img = corpus.images[0]
    e0 = encode_prompt(victim, corpus.prompts[0][0]).vector
    res = minimize(lambda x: forward_with_grad(victim, img, x, target)[::2],
                   e0, jac=True, method="L-BFGS-B", options={"maxiter": 200})
    assert victim.answer(img, res.x) == target


def test_gradient_matches_finite_differences(victim, corpus):
    gen = np.random.default_rng(5)
    img = np.clip(corpus.images[1] + gen.normal(0, 0.01, corpus.images[1].shape), 0, 1)
    e = encode_prompt(victim, corpus.prompts[2][0]).vector
    _, g_img, g_e = forward_with_grad(victim, img, e, TARGET)
    h = 1e-4
    # pixel gradients are tiny per coordinate, so check the 8x8 block sums
    # (what the victim actually sees) plus raw prompt coordinates
    errs = []
    for _ in range(16):
        r, c, ch = gen.integers(0, 8), gen.integers(0, 8), gen.integers(0, 3)
        bump = np.zeros_like(img)
        bump[8 * r:8 * r + 8, 8 * c:8 * c + 8, ch] = h
        fd = (victim.loss(img + bump, e, TARGET) - victim.loss(img - bump, e, TARGET)) / (2 * h)
        an = g_img[8 * r:8 * r + 8, 8 * c:8 * c + 8, ch].sum()
        errs.append(abs(fd - an) / max(abs(an), 1e-3))
    for k in gen.choice(victim.prompt_dim, 16, replace=False):
        d = np.zeros_like(e)
        d[k] = h
        fd = (victim.loss(img, e + d, TARGET) - victim.loss(img, e - d, TARGET)) / (2 * h)
        errs.append(abs(fd - g_e[k]) / max(abs(g_e[k]), 1e-3))
    assert max(errs) <= 1e-3


def test_gradient_vanishes_at_local_minimum(victim, corpus):
    img = corpus.images[0]
    e0 = encode_prompt(victim, corpus.prompts[0][0]).vector
    res = minimize(lambda x: forward_with_grad(victim, img, x, TARGET)[::2], e0, jac=True,
                   method="L-BFGS-B", options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 5000})
    _, _, g = forward_with_grad(victim, img, res.x, TARGET)
    assert np.linalg.norm(g) <= 1e-4


def test_input_validation(victim):
    with pytest.raises(ValueError):
        victim.loss(np.zeros((32, 32, 3)), np.zeros(64), TARGET)
    with pytest.raises(ValueError):
        victim.loss(np.zeros((64, 64, 3)), np.zeros(10), TARGET)
    with pytest.raises(KeyError):
        victim.loss(np.zeros((64, 64, 3)), np.zeros(64), "not a caption")
    with pytest.raises(ValueError):
        build_toy_victim(1, tau=0.0)


def test_ledger_counts_and_refuses(victim):
    ledger = QueryLedger(3)
    img, e = next(random_inputs(victim, 1))
    query_loss(victim, img, e, TARGET, ledger)
    query_text(victim, img, e, ledger)
    with pytest.raises(KeyError):
        query_loss(victim, img, e, "nope", ledger)
    assert ledger.used == 2
    query_text(victim, img, e, ledger)
    with pytest.raises(BudgetExhausted):
        query_text(victim, img, e, ledger)
    assert ledger.used == ledger.budget == 3


def test_ledger_is_atomic_under_threads():
    ledger = QueryLedger(1000)
    hits = []

    def worker():
        n = 0
        while True:
            try:
                ledger.charge()
            except BudgetExhausted:
                break
            n += 1
        hits.append(n)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sum(hits) == ledger.used == 1000


def test_oracle_is_deterministic(victim):
    oracle = VictimOracle(victim, QueryLedger(10))
    img, e = next(random_inputs(victim, 1))
    assert oracle.loss(img, e, TARGET) == oracle.loss(img, e, TARGET)
    assert oracle.text(img, e) == oracle.text(img, e)
    assert oracle.ledger.used == 4


def test_surrogate_oracle_noise_keyed_by_content(victim):
    emb = EvalEmbedder()
    a = TextSurrogateOracle(victim, QueryLedger(10), emb, sigma=0.01, seed=0)
    b = TextSurrogateOracle(victim, QueryLedger(10), emb, sigma=0.01, seed=0)
    (i1, e1), (i2, e2) = list(random_inputs(victim, 2))
    first = [a.loss(i1, e1, TARGET), a.loss(i2, e2, TARGET)]
    second = [b.loss(i2, e2, TARGET), b.loss(i1, e1, TARGET)]
    assert first == second[::-1]
    clean = 1.0 - emb.similarity(victim.answer(i1, e1), TARGET)
    assert abs(first[0] - clean) < 0.05
    assert a.ledger.used == 2
