"""Self-contained oracle suite behind the `verify` CLI command.

Each check recomputes an expected answer through an independent route
(hand arithmetic, nested loops, finite differences) and compares it with
the production path. Fault hooks deliberately break specific internals so
the suite's power to catch regressions is itself testable.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from . import losses, tensor as T
from .corpus import CorpusAccumulator, FilterPolicy, analyze, filter_captions
from .data import Vocab, decode_caption, encode_caption, tokenize_words
from .encoders import TextConfig, TextEncoder, VitConfig, VitEncoder, DualEncoder
from .gradcheck import gradient_report
from .losses import (
    NNQueue,
    info_nce,
    multiview_loss,
    neighbor_supervision_loss,
    nt_xent_loss,
    tokenwise_max_similarity,
)
from .optim import lr_at
from .seeding import rng_for

FAULTS = ("filip-tiebreak", "softmax-stability", "queue-fifo")


@contextlib.contextmanager
def inject_fault(name: str):
    """Deliberately break one internal mechanism for the check's duration."""
    if name == "filip-tiebreak":
        original = T._argmax_forward

        def highest_index_ties(x, axis):
            flipped = np.flip(x, axis=axis)
            return x.shape[axis] - 1 - np.argmax(flipped, axis=axis)

        T._argmax_forward = highest_index_ties
        try:
            yield
        finally:
            T._argmax_forward = original
    elif name == "softmax-stability":
        original = T._softmax_forward

        def naive(x, axis):
            with np.errstate(over="ignore", invalid="ignore"):
                e = np.exp(x)
                return e / e.sum(axis=axis, keepdims=True)

        T._softmax_forward = naive
        try:
            yield
        finally:
            T._softmax_forward = original
    elif name == "queue-fifo":
        original = NNQueue.enqueue

        def stuck_head(self, vectors):
            vectors = np.asarray(vectors, dtype=np.float64)
            if self.buffer is None:
                self.buffer = np.zeros((self.capacity, vectors.shape[1]))
            k = min(vectors.shape[0], self.capacity)
            self.buffer[:k] = vectors[:k]  # head never advances: eviction order wrong
            self.fill = min(self.capacity, self.fill + vectors.shape[0])

        NNQueue.enqueue = stuck_head
        try:
            yield
        finally:
            NNQueue.enqueue = original
    else:
        raise ValueError(f"unknown fault {name!r}; known: {', '.join(FAULTS)}")


def _unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _loop_info_nce(left: np.ndarray, right: np.ndarray, temperature: float) -> float:
    n = left.shape[0]
    total = 0.0
    for i in range(n):
        logits = [float(left[i] @ right[j]) / temperature for j in range(n)]
        peak = max(logits)
        log_z = peak + math.log(sum(math.exp(l - peak) for l in logits))
        total += -(logits[i] - log_z)
    return total / n


def _loop_nt_xent(a: np.ndarray, b: np.ndarray, temperature: float) -> float:
    z = np.concatenate([a, b], axis=0)
    n = a.shape[0]
    total = 0.0
    for i in range(2 * n):
        positive = (i + n) % (2 * n)
        logits = [float(z[i] @ z[j]) / temperature for j in range(2 * n) if j != i]
        target = [j for j in range(2 * n) if j != i].index(positive)
        peak = max(logits)
        log_z = peak + math.log(sum(math.exp(l - peak) for l in logits))
        total += -(logits[target] - log_z)
    return total / (2 * n)


def _loop_tokenwise(img_tokens: np.ndarray, txt_tokens: np.ndarray) -> tuple[float, float]:
    image_side = np.mean([max(tok @ other for other in txt_tokens) for tok in img_tokens])
    text_side = np.mean([max(tok @ other for other in img_tokens) for tok in txt_tokens])
    return float(image_side), float(text_side)


# checks: each returns (ok, detail) ------------------------------------------------


def check_grad_primitives():
    rng = np.random.default_rng(7)
    x = T.Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    w = T.constant(rng.standard_normal((3, 5)))
    gain = T.Tensor(rng.standard_normal(5), requires_grad=True)
    bias = T.Tensor(rng.standard_normal(5), requires_grad=True)
    report = gradient_report(
        lambda: T.sum_(T.softmax(T.layernorm(T.gelu(x), gain, bias), axis=1) * w),
        [("x", x), ("gain", gain), ("bias", bias)],
    )
    worst = max(report.values())
    return worst <= 1e-6, f"worst rel. err {worst:.2e} over softmax/layernorm/gelu chain"


def check_grad_encoders():
    rng = rng_for(0, "verify-grad")
    model = DualEncoder(
        VitEncoder(VitConfig(image_size=8, patch_size=4, width=8, depth=1, heads=2, embed_dim=8), rng),
        TextEncoder(TextConfig(vocab_size=24, context_length=8, width=8, depth=1, heads=2, embed_dim=8), rng),
    )
    images = T.Tensor(np.random.default_rng(3).uniform(0, 1, (2, 3, 8, 8)))
    ids = np.array([[1, 6, 7, 2, 0, 0, 0, 0], [1, 8, 9, 10, 2, 0, 0, 0]])

    def loss():
        breakdown = losses.clip_loss(model.encode_image(images), model.encode_text(ids), model.temperature())
        return breakdown.total

    picks = [
        ("log_temperature", model.log_temperature),
        ("image.ln_final.gain", dict(model.named_parameters())["image.ln_final.gain"]),
        ("text.proj.weight", dict(model.named_parameters())["text.proj.weight"]),
    ]
    report = gradient_report(loss, picks)
    worst = max(report.values())
    return worst <= 1e-4, f"worst rel. err {worst:.2e} across {len(picks)} sampled parameters"


def check_loss_fixtures():
    problems = []
    one = T.Tensor(np.array([[1.0, 0.0]]))
    if abs(info_nce(one, one, 1.0).item()) > 1e-15:
        problems.append("single-pair loss not zero")
    rng = np.random.default_rng(11)
    row = rng.standard_normal(6)
    row /= np.linalg.norm(row)
    same = T.Tensor(np.tile(row, (5, 1)))
    if abs(info_nce(same, same, 0.3).item() - math.log(5)) > 1e-9:
        problems.append("identical-embedding loss differs from ln N")
    ortho = T.Tensor(np.eye(2))
    expected = math.log(1.0 + math.exp(-1.0))
    if abs(info_nce(ortho, ortho, 1.0).item() - expected) > 1e-9:
        problems.append("orthonormal N=2 fixture mismatch")
    pair = _unit_rows(rng, 4, 8)
    if abs(info_nce(T.Tensor(pair), T.Tensor(_unit_rows(rng, 4, 8)), 1e6).item() - math.log(4)) > 1e-6:
        problems.append("high-temperature limit differs from ln N")
    return not problems, "; ".join(problems) if problems else "4 closed-form fixtures match"


def check_bruteforce(instances: int = 20):
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(instances):
        n, d = int(rng.integers(1, 4)), int(rng.integers(2, 6))
        temp = float(rng.uniform(0.05, 2.0))
        left, right = _unit_rows(rng, n, d), _unit_rows(rng, n, d)
        got = info_nce(T.Tensor(left), T.Tensor(right), temp).item()
        worst = max(worst, abs(got - _loop_info_nce(left, right, temp)))
        got = nt_xent_loss(T.Tensor(left), T.Tensor(right), temp).item()
        worst = max(worst, abs(got - _loop_nt_xent(left, right, temp)))
        img_toks = _unit_rows(rng, int(rng.integers(1, 4)), d)
        txt_toks = _unit_rows(rng, int(rng.integers(1, 4)), d)
        got_i, got_t = (v.item() for v in tokenwise_max_similarity(T.Tensor(img_toks), T.Tensor(txt_toks)))
        want_i, want_t = _loop_tokenwise(img_toks, txt_toks)
        worst = max(worst, abs(got_i - want_i), abs(got_t - want_t))
        # queue retrieval vs exhaustive scan
        queue = NNQueue(16)
        stored = _unit_rows(rng, 8, d)
        queue.enqueue(stored)
        queries = _unit_rows(rng, 2, d)
        got_nb = queue.nearest(queries)
        want_nb = stored[np.argmax(queries @ stored.T, axis=1)]
        worst = max(worst, float(np.abs(got_nb - want_nb).max()))
    return worst <= 1e-10, f"{instances} random instances, worst abs. gap {worst:.2e}"


def check_composition():
    rng = np.random.default_rng(31)
    terms = {name: T.Tensor(np.array(float(rng.uniform(0.2, 3.0)))) for name in losses.TERM_ORDER}
    cfg = losses.LossConfig(variant="defilip")
    full = losses.defilip_loss(
        terms["clip"], terms["image_ssl"], terms["text_mlm"],
        terms["multiview"], terms["neighbor"], terms["token_align"], cfg,
    )
    base = losses.declip_loss(
        terms["clip"], terms["image_ssl"], terms["text_mlm"],
        terms["multiview"], terms["neighbor"], cfg,
    )
    gap1 = abs(full.total.item() - full.recompute_total())
    gap2 = abs((full.total.item() - base.total.item()) - cfg.token_align_weight * terms["token_align"].item())
    ok = gap1 <= 1e-12 and gap2 <= 1e-12
    return ok, f"breakdown gap {gap1:.2e}, composite difference gap {gap2:.2e}"


def check_filip_tiebreak():
    img = T.Tensor(np.array([[1.0, 0.0]]))
    txt = T.Tensor(np.array([[1.0, 0.0], [1.0, 0.0]]), requires_grad=True)
    image_side, _ = tokenwise_max_similarity(img, txt)
    T.backward(image_side)
    grad_first = float(np.abs(txt.grad[0]).sum())
    grad_second = float(np.abs(txt.grad[1]).sum())
    ok = grad_first > 0 and grad_second == 0
    return ok, f"tied match routed to token 0 (|g0|={grad_first:.3f}, |g1|={grad_second:.3f})"


def check_softmax_stability():
    out = T.softmax(T.constant([[1000.0, 0.0], [-1000.0, 0.0]]), axis=1).data
    finite = bool(np.isfinite(out).all())
    rows = bool(np.allclose(out.sum(axis=1), 1.0, atol=1e-12))
    return finite and rows, f"extreme logits finite={finite}, rows sum to one={rows}"


def check_queue_fifo():
    queue = NNQueue(4)
    vectors = np.eye(6)[:, :6]  # 6 distinct one-hot rows
    for i in range(6):
        queue.enqueue(vectors[i : i + 1])
    stored = {tuple(row) for row in queue.buffer}
    expected = {tuple(row) for row in vectors[2:]}  # oldest two evicted
    if stored != expected:
        return False, "eviction order wrong: oldest entries were not overwritten first"
    # same-step exclusion: a cold queue returns zero before the enqueue
    queue2 = NNQueue(4)
    img = T.Tensor(np.eye(2))
    loss, skipped = neighbor_supervision_loss(img, img, queue2, 1.0)
    ok = loss.item() == 0.0 and skipped == 1 and queue2.fill == 2
    return ok, "oldest-first eviction and cold-start exclusion verified"


def check_schedule():
    problems = []
    if abs(lr_at(0, 10, 100, 1e-4, 1e-3) - 1e-4) > 1e-18:
        problems.append("step 0 is not base_lr")
    if abs(lr_at(10, 10, 100, 1e-4, 1e-3) - 1e-3) > 1e-18:
        problems.append("warmup boundary is not peak_lr")
    if abs(lr_at(100, 10, 100, 1e-4, 1e-3)) > 1e-12:
        problems.append("final step is not zero")
    left = lr_at(9, 10, 100, 1e-4, 1e-3)
    if not 0 < 1e-3 - left < 1.1e-4:
        problems.append("approach to the boundary is not linear")
    return not problems, "; ".join(problems) if problems else "warmup/cosine endpoints and continuity hold"


def check_tokenizer():
    vocab = Vocab.build(["a photo of a red circle", "the blue square"], max_size=64)
    ids = encode_caption("A photo of a RED circle", vocab, 16)
    back = decode_caption(ids, vocab)
    if back != ["a", "photo", "of", "a", "red", "circle"]:
        return False, f"roundtrip produced {back}"
    long = encode_caption(" ".join(["red"] * 100), vocab, 16)
    if len(long) != 16 or long[-1] != 2:
        return False, "truncation did not preserve the end token"
    if tokenize_words("Hello, world!") != ["hello", ",", "world", "!"]:
        return False, "punctuation splitting broken"
    return True, "roundtrip, truncation, punctuation fixtures match"


def check_corpus():
    report = analyze(["a b", "a b c d"])
    problems = []
    if (report.length_mean, report.length_std) != (3.0, 1.0):
        problems.append(f"mean/std got ({report.length_mean}, {report.length_std})")
    if report.english_ratio != 1.0 or report.unique_tokens != 4:
        problems.append("ratio or unique-token count wrong")
    if abs(analyze(["a ☃"]).english_ratio - 0.5) > 1e-15:
        problems.append("non-ASCII token not excluded from English count")
    left, right = CorpusAccumulator(), CorpusAccumulator()
    for i, cap in enumerate(["a b", "a b c d", "x y z", "a ☃"]):
        (left if i % 2 == 0 else right).add(cap)
    merged = left.merge(right).report()
    single = analyze(["a b", "a b c d", "x y z", "a ☃"])
    if merged != single:
        problems.append("shard merge differs from single pass")
    kept, tally = filter_captions(["a ☃"], FilterPolicy(min_english_ratio=0.9))
    if kept or tally != {"length": 0, "ratio": 1}:
        problems.append("ratio filter fixture wrong")
    return not problems, "; ".join(problems) if problems else "hand fixtures and shard merge match"


CHECKS = (
    ("grad.primitives", check_grad_primitives),
    ("grad.encoders", check_grad_encoders),
    ("loss.fixtures", check_loss_fixtures),
    ("loss.bruteforce", check_bruteforce),
    ("loss.composition", check_composition),
    ("filip.tiebreak", check_filip_tiebreak),
    ("softmax.stability", check_softmax_stability),
    ("queue.fifo", check_queue_fifo),
    ("schedule.boundary", check_schedule),
    ("tokenizer.roundtrip", check_tokenizer),
    ("corpus.fixtures", check_corpus),
)


def run_verify(faults: list[str] | None = None, list_only: bool = False, out=print) -> int:
    if list_only:
        for name, _ in CHECKS:
            out(name)
        return 0
    with contextlib.ExitStack() as stack:
        for fault in faults or []:
            stack.enter_context(inject_fault(fault))
        failures = 0
        for name, fn in CHECKS:
            try:
                ok, detail = fn()
            except Exception as err:  # a crashed check is a failed check
                ok, detail = False, f"raised {type(err).__name__}: {err}"
            out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
            failures += 0 if ok else 1
    out(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return 0 if failures == 0 else 1
