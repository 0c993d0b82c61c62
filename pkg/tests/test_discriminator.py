import math

import numpy as np
import pytest

from rlst.corpus import SyntheticSpec, UsageError, build_vocab, make_synthetic_task
from rlst.discriminator import (
    DiscriminatorParams,
    adversarial_loss,
    adversarial_step,
    classification_loss,
    pretrain_discriminator_step,
    score_batch,
    style_probs,
    style_score,
    swap_directions,
)
from rlst.nn_core import grad_check

from conftest import framed, redraw


def model(seed, vocab=9, hidden=4, embed=3, attention=3, scale=1.0):
    rng = np.random.default_rng(seed)
    dp = DiscriminatorParams.create(vocab, hidden, rng, embed_dim=embed, attention_dim=attention)
    if scale is not None:
        redraw(dp.params, rng, scale)
    return dp


def reference_score(tokens, dp):
    """Plain per-sentence loops over the raw parameter arrays."""
    v = {name: t.values for name, t in dp.params.items()}
    sig = lambda x: 1.0 / (1.0 + math.exp(-x)) if np.isscalar(x) else 1.0 / (1.0 + np.exp(-x))

    def run(prefix, seq):
        h = np.zeros(v[f"{prefix}.u_z"].shape[0])
        out = []
        for tok in seq:
            x = v["embed"][tok]
            z = sig(v[f"{prefix}.w_z"] @ x + v[f"{prefix}.u_z"] @ h + v[f"{prefix}.b_z"])
            r = sig(v[f"{prefix}.w_r"] @ x + v[f"{prefix}.u_r"] @ h + v[f"{prefix}.b_r"])
            n = np.tanh(v[f"{prefix}.w_n"] @ x + v[f"{prefix}.u_n"] @ (r * h) + v[f"{prefix}.b_n"])
            h = (1 - z) * h + z * n
            out.append(h)
        return out

    fw = run("fw", tokens)
    bw = run("bw", tokens[::-1])[::-1]
    states = [np.concatenate([f, b]) for f, b in zip(fw, bw)]
    scores = [v["pool.v"] @ np.tanh(v["pool.w"] @ s + v["pool.b"]) for s in states]
    e = np.exp(np.array(scores) - max(scores))
    alpha = e / e.sum()
    pooled = sum(a * s for a, s in zip(alpha, states))
    d = sig(float(v["out.w"] @ pooled + v["out.b"][0]))
    return min(max(d, 1e-6), 1 - 1e-6)


class TestStyleScore:
    def test_zero_output_layer_gives_half(self):
        dp = model(0)
        dp.out_w.values[...] = 0.0
        dp.out_b.values[...] = 0.0
        assert style_score(framed(4, 5, 6), dp) == 0.5

    def test_matches_loop_reference(self):
        dp = model(1)
        for toks in [(2, 4, 5, 3), (2, 8, 3), (2, 4, 4, 6, 7, 7, 3)]:
            assert style_score(toks, dp) == pytest.approx(reference_score(toks, dp), abs=1e-12)

    def test_batched_equals_single(self):
        dp = model(2)
        sents = [(2, 4, 5, 3), (2, 8, 3), (2, 4, 4, 6, 7, 7, 3)]
        np.testing.assert_allclose(score_batch(sents, dp), [style_score(s, dp) for s in sents], atol=1e-14)

    def test_deterministic(self):
        dp = model(3)
        assert style_score(framed(5, 6), dp) == style_score(framed(5, 6), dp)

    def test_clamped(self):
        dp = model(4)
        dp.out_b.values[...] = 100.0
        assert style_score(framed(5), dp) == 1 - 1e-6
        dp.out_b.values[...] = -100.0
        assert style_score(framed(5), dp) == 1e-6

    def test_out_of_range(self):
        with pytest.raises(UsageError):
            style_score(framed(4, 9), model(0))

    def test_reversed_sentence_under_swapped_directions(self):
        for seed in range(10):
            dp = model(seed)
            swapped = swap_directions(dp)
            toks = tuple(np.random.default_rng(seed).integers(2, 9, 6))
            assert style_score(toks[::-1], swapped) == pytest.approx(style_score(toks, dp), abs=1e-13)

    def test_gradient(self):
        dp = model(42)
        batch = [framed(4, 5, 6), framed(7, 8, style="source"), framed(4, 8, 8, 5)]
        loss = lambda _: classification_loss(batch, [1, 0, 1], dp)
        assert grad_check(loss, dp.params, step=1e-5, sample_count=80, rng=np.random.default_rng(42)) <= 1e-4


class TestPretraining:
    def test_chance_level_loss(self):
        dp = model(0, vocab=40, hidden=16, embed=16, attention=16, scale=None)
        batch = [framed(4, 5, 6), framed(7, 8), framed(9, 10, style="source"), framed(11, style="source")]
        loss = pretrain_discriminator_step(batch, dp, 0.1)
        assert abs(loss - math.log(2)) <= 0.1 * math.log(2)

    def test_single_example_driven_to_zero(self):
        dp = model(1, vocab=20, hidden=8, embed=8, attention=8, scale=None)
        ex = [framed(4, 5, 6)]
        losses = np.array([pretrain_discriminator_step(ex, dp, 0.5) for _ in range(200)])
        windows = losses.reshape(-1, 20).mean(axis=1)
        assert np.all(np.diff(windows) < 0)
        assert losses[-1] < 0.02

    def test_empty_batch(self):
        with pytest.raises(UsageError):
            pretrain_discriminator_step([], model(0), 0.1)

    def test_held_out_accuracy_on_marker_task(self):
        corpus = make_synthetic_task(np.random.default_rng(0), SyntheticSpec(content_vocab_size=20,
                                                                               sentence_count=400))
        vocab = build_vocab(corpus)
        rng = np.random.default_rng(0)
        dp = DiscriminatorParams.create(len(vocab), 12, rng, embed_dim=12, attention_dim=12)
        train = corpus.encoded(vocab, "train", "source") + corpus.encoded(vocab, "train", "target")
        for _ in range(400):
            batch = [train[i] for i in rng.choice(len(train), 16, replace=False)]
            pretrain_discriminator_step(batch, dp, 2.0)
        test_a = corpus.encoded(vocab, "test", "source")
        test_b = corpus.encoded(vocab, "test", "target")
        pa = score_batch([s.tokens for s in test_a], dp)
        pb = score_batch([s.tokens for s in test_b], dp)
        accuracy = (np.sum(pa < 0.5) + np.sum(pb >= 0.5)) / (len(pa) + len(pb))
        assert accuracy >= 0.95


class TestAdversarial:
    def test_uninformative_point(self):
        dp = model(0)
        dp.out_w.values[...] = 0.0
        dp.out_b.values[...] = 0.0
        human = [framed(4, 5), framed(6)]
        generated = [framed(7, 8), framed(4, 4, 4)]
        assert adversarial_loss(human, generated, dp).item() == pytest.approx(2 * math.log(2), abs=1e-15)

    def test_perfect_discriminator_limit(self):
        dp = model(0)
        for _, t in dp.params.items():
            t.values[...] = 0.0
        dp.embed.values[4] = 1.0  # token 4 marks human text
        dp.params["fw.w_n"].values[...] = 5.0
        dp.params["fw.b_z"].values[...] = 10.0
        dp.out_w.values[:4] = 40.0
        dp.out_b.values[...] = -20.0
        loss = adversarial_loss([framed(4)], [framed(5)], dp).item()
        assert loss <= 2 * 1.1e-6

    def test_three_sentence_oracle(self):
        dp = model(7)
        rng = np.random.default_rng(7)
        human = [framed(*rng.integers(4, 9, n)) for n in (3, 5, 2)]
        generated = [framed(*rng.integers(4, 9, n)) for n in (4, 1, 6)]
        d_h = [reference_score(s.tokens, dp) for s in human]
        d_m = [reference_score(s.tokens, dp) for s in generated]
        expected = (-sum(math.log(1 - d) for d in d_m) - sum(math.log(d) for d in d_h)) / 3
        before = {n: t.values.copy() for n, t in dp.params.items()}
        assert adversarial_loss(human, generated, dp).item() == pytest.approx(expected, abs=1e-10)
        assert adversarial_step(human, generated, dp, 1e-2) == pytest.approx(expected, abs=1e-10)
        assert any(not np.array_equal(before[n], t.values) for n, t in dp.params.items())

    def test_non_negative(self):
        for seed in range(20):
            dp = model(seed, scale=2.0)
            assert adversarial_loss([framed(4, 5)], [framed(6, 7)], dp).item() >= 0

    def test_mismatched_sizes(self):
        with pytest.raises(UsageError):
            adversarial_loss([framed(4)], [framed(5), framed(6)], model(0))

    def test_one_step_decreases_loss(self):
        decreased = 0
        for seed in range(100):
            dp = model(seed, vocab=20, hidden=8, embed=8, attention=8, scale=None)
            rng = np.random.default_rng(seed)
            human = [framed(*rng.integers(4, 20, rng.integers(2, 7))) for _ in range(4)]
            generated = [framed(*rng.integers(4, 20, rng.integers(2, 7))) for _ in range(4)]
            before = adversarial_step(human, generated, dp, 1e-2)
            after = adversarial_loss(human, generated, dp).item()
            decreased += after < before
        assert decreased >= 95

    def test_probabilities_in_open_interval(self):
        dp = model(5, scale=3.0)
        p = style_probs([(2, 4, 3), (2, 5, 6, 7, 3)], dp).values
        assert np.all((p >= 1e-6) & (p <= 1 - 1e-6))
