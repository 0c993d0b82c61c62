"""Acceptance criteria, one test per criterion.

Each test records a one-line PASS/FAIL verdict that is repeated in the
terminal summary.  Criterion 8 runs the complete synthetic pipeline for three
seeds and dominates the runtime (roughly 4-5 minutes per seed).
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from rlst import pipeline as P
from rlst.config import load_config
from rlst.corpus import SOURCE
from rlst.discriminator import DiscriminatorParams, adversarial_loss, adversarial_step, classification_loss
from rlst.generator import GeneratorParams, autoencode_loss
from rlst.language_model import LMParams, corpus_perplexity, fluency_score, lm_loss, perplexity
from rlst.metrics import overall_score
from rlst.nn_core import ParameterSet, checkpoint, grad_check, sgd_step
from rlst.rl import action_score, discounted_returns, policy_gradient_loss, shape_rewards
from rlst.semantic import WordDistribution, wmd
from rlst.transport import solve_transport

from conftest import ACCEPTANCE, framed, redraw
from test_metrics import PUBLISHED_ROWS
from test_rl import bandit_logp, bandit_policy, softmax
from test_semantic import lp_oracle, random_problem, vertex_oracle

CONFIG = Path(__file__).parents[1] / "configs" / "synthetic.conf"
SEEDS = (0, 1, 2)


def verdict(number, title, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    assert ok, line


def test_criterion_1_gradient_fidelity():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    fixture = [framed(4, 5, 6)]
    gp = GeneratorParams.create(9, 5, rng, embed_dim=4)
    dp = DiscriminatorParams.create(9, 4, rng, embed_dim=3, attention_dim=3)
    lm = LMParams.create(9, 4, rng, embed_dim=3)
    errors = {}
    for name, params, loss in [
        ("generator", gp.params, lambda _: autoencode_loss(fixture, gp)),
        ("discriminator", dp.params, lambda _: classification_loss(fixture, [1], dp)),
        ("language model", lm.params, lambda _: lm_loss(fixture, lm)),
    ]:
        redraw(params, rng)
        every = sum(t.values.size for _, t in params.items())
        errors[name] = grad_check(loss, params, step=1e-5, sample_count=every, rng=rng)
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items()) + f" (all coordinates, {elapsed:.1f}s)"
    verdict(1, "gradient fidelity", worst <= 1e-4 and elapsed < 120, detail)


def test_criterion_2_transport_exactness():
    rng = np.random.default_rng(2)
    small = 0.0
    for k in range(500):
        m, n = rng.integers(1, 4, 2)
        a, b, cost = random_problem(rng, m, n, integer_mass=k % 2 == 0)
        small = max(small, abs(solve_transport(a, b, cost).total_cost - vertex_oracle(a, b, cost)))
    medium = 0.0
    for k in range(200):
        m, n = rng.integers(1, 6, 2)
        a, b, cost = random_problem(rng, m, n, integer_mass=k % 3 == 0)
        medium = max(medium, abs(solve_transport(a, b, cost).total_cost - lp_oracle(a, b, cost)))

    emb = rng.normal(size=(12, 4))
    draw = lambda: WordDistribution.from_tokens(rng.integers(4, 12, rng.integers(1, 6)))
    axioms = True
    for _ in range(1000):
        x, y, z = draw(), draw(), draw()
        dxy, dyx = wmd(x, y, emb), wmd(y, x, emb)
        axioms &= wmd(x, x, emb) == 0.0 and (dxy > 0 or x == y)
        axioms &= abs(dxy - dyx) <= 1e-12
        axioms &= wmd(x, z, emb) <= dxy + wmd(y, z, emb) + 1e-9
    ok = small <= 1e-9 and medium <= 1e-9 and axioms
    verdict(2, "transport exactness", ok,
            f"max gap {small:.1e} vs vertex enumeration, {medium:.1e} vs linear program, axioms {axioms}")


def test_criterion_3_reward_algebra():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        f = rng.normal(size=rng.integers(1, 31)) * rng.uniform(0.1, 5)
        r = shape_rewards(f)
        worst = max(worst, abs(r.sum() - f[-1]), abs(discounted_returns(r, 1.0)[0] - f[-1]))
    f_walk = action_score([0.2, 0.5, 0.5])
    verdict(3, "reward algebra", worst <= 1e-12 and f_walk == 0.4,
            f"worst telescoping gap {worst:.1e}; three-rollout walkthrough f = {f_walk!r}")


def test_criterion_4_reinforce_correctness():
    start = time.perf_counter()
    converged = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        ps, theta = bandit_policy(np.zeros(3))
        reached = None
        for update in range(1, 501):
            a = int(rng.choice(3, p=softmax(theta.values[0])))
            policy_gradient_loss(bandit_logp(theta, np.array([a])), np.array([[float(a == 1)]])).backward()
            sgd_step(ps, 1.0)
            if reached is None and softmax(theta.values[0])[1] >= 0.99:
                reached = update
        converged.append(reached is not None and softmax(theta.values[0])[1] >= 0.99)

    rng = np.random.default_rng(40)
    rewards = np.array([0.0, 1.0, 0.0])
    theta0 = rng.normal(size=3)
    exact_j = lambda th: float(softmax(th) @ rewards)
    fd = np.array([(exact_j(theta0 + 1e-6 * e) - exact_j(theta0 - 1e-6 * e)) / 2e-6 for e in np.eye(3)])
    n = 10_000
    p = softmax(theta0)
    actions = rng.choice(3, size=n, p=p)
    _, theta = bandit_policy(theta0)
    policy_gradient_loss(bandit_logp(theta, actions), rewards[actions][:, None]).backward()
    estimate = -theta.grad[0]
    per_episode = rewards[actions][:, None] * (np.eye(3)[actions] - p)
    sigma = per_episode.std(axis=0, ddof=1) / math.sqrt(n)
    z = np.abs(estimate - fd) / sigma
    elapsed = time.perf_counter() - start
    ok = sum(converged) >= 9 and np.all(z <= 3) and elapsed < 300
    verdict(4, "REINFORCE correctness", ok,
            f"{sum(converged)}/10 seeds reach P(target) >= 0.99 in 500 updates; "
            f"Monte Carlo vs finite differences max {z.max():.2f} sigma ({elapsed:.1f}s)")


def test_criterion_5_adversarial_loss():
    dp = DiscriminatorParams.create(9, 4, np.random.default_rng(5), embed_dim=3, attention_dim=3)
    dp.out_w.values[...] = 0.0
    dp.out_b.values[...] = 0.0
    at_half = adversarial_loss([framed(4, 5), framed(6)], [framed(7, 8), framed(4, 4, 4)], dp).item()
    gap = abs(at_half - 2 * math.log(2))
    decreased = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d = DiscriminatorParams.create(20, 8, rng, embed_dim=8, attention_dim=8)
        human = [framed(*rng.integers(4, 20, rng.integers(2, 7))) for _ in range(4)]
        generated = [framed(*rng.integers(4, 20, rng.integers(2, 7))) for _ in range(4)]
        before = adversarial_step(human, generated, d, 1e-2)
        decreased += adversarial_loss(human, generated, d).item() < before
    verdict(5, "adversarial loss arithmetic", gap <= 1e-12 and decreased >= 95,
            f"|L_D - 2 ln 2| = {gap:.1e} at D = 0.5; one step decreased L_D in {decreased}/100 trials")


def test_criterion_6_perplexity_identities():
    rng = np.random.default_rng(6)
    lm = LMParams.create(11, 4, rng, embed_dim=3)
    lm.out_w.values[...] = 0.0
    lm.out_b.values[...] = 0.0
    corpus = [framed(*rng.integers(4, 11, rng.integers(1, 8))) for _ in range(20)]
    uniform = corpus_perplexity(corpus, lm)
    worst = 0.0
    for seed in range(50):
        model = LMParams.create(11, 4, np.random.default_rng(seed), embed_dim=3)
        redraw(model.params, np.random.default_rng(seed), 2.0)
        s = corpus[seed % len(corpus)]
        worst = max(worst, abs(perplexity(s, model) - math.exp(-fluency_score(s, model))) / perplexity(s, model))
    ok = uniform == pytest.approx(11.0, rel=1e-12) and worst <= 1e-12
    verdict(6, "perplexity identities", ok, f"uniform corpus PPL {uniform!r} (V = 11); worst exp(-fluency) gap {worst:.1e}")


def test_criterion_7_overall_score_audit():
    gaps = [abs(overall_score(s, t) - printed) for s, t, printed in PUBLISHED_ROWS]
    matches = sum(round(overall_score(s, t), 3) == printed for s, t, printed in PUBLISHED_ROWS)
    ok = len(PUBLISHED_ROWS) == 12 and max(gaps) <= 0.001 and matches == 12
    verdict(7, "overall-score formula audit", ok,
            f"{matches}/12 published entries reproduced to 3 d.p.; max gap {max(gaps):.1e}")


class Run:
    def __init__(self, seed, root):
        self.cfg = load_config(CONFIG, {"seed": seed, "out": str(root / f"seed{seed}")})
        self.rl_dir = self.cfg.out_dir / P.RL_DIR

    def pretrain(self):
        P.synthesize(self.cfg)
        task = P.load_task(self.cfg)
        gp = P.pretrain_generator(self.cfg, task)
        style, eval_style = P.pretrain_style(self.cfg, task)
        lm, eval_lm = P.pretrain_lm(self.cfg, task)
        for name, m in [(P.GEN_CKPT, gp), (P.STYLE_CKPT, style), (P.EVAL_STYLE_CKPT, eval_style),
                        (P.LM_CKPT, lm), (P.EVAL_LM_CKPT, eval_lm)]:
            checkpoint.save(m.params, self.cfg.out_dir / name)

    def models(self):
        cfg = self.cfg
        return P.Models(P.load_generator(cfg), P.load_style(cfg), P.load_lm(cfg),
                        P.load_style(cfg, P.EVAL_STYLE_CKPT), P.load_lm(cfg, P.EVAL_LM_CKPT))


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Full pipeline per seed: synthesis, three pre-trainings, RL, held-out evaluation."""
    root = tmp_path_factory.mktemp("acceptance")
    out = {}
    for seed in SEEDS:
        start = time.perf_counter()
        run = Run(seed, root)
        run.pretrain()
        task = P.load_task(run.cfg)
        models = run.models()
        history = P.run_rl(run.cfg, task, models, run.rl_dir)
        best = P.load_generator(run.cfg, run.rl_dir / P.RL_BEST_GEN)
        test = task.sentences("test", SOURCE)[:200]
        report = P.evaluate_transfer(run.cfg, task, best, test, models.eval_style, models.eval_lm)
        out[seed] = (run, len(history.updates), len(test), report, time.perf_counter() - start)
    return out


def test_criterion_8_end_to_end_transfer(runs):
    parts, ok = [], True
    strength = np.array([runs[s][3].style for s in SEEDS])
    content = np.array([runs[s][3].content for s in SEEDS])
    for seed in SEEDS:
        run, updates, held_out, rep, seconds = runs[seed]
        ok &= updates >= 2000 and held_out == 200 and seconds <= 900
        ok &= rep.style >= 0.9 and rep.content >= 0.9
        parts.append(f"seed {seed}: strength {rep.style:.3f} content {rep.content:.3f} "
                     f"({updates} updates, {seconds / 60:.1f} min)")
    spread = max(np.abs(strength - strength.mean()).max(), np.abs(content - content.mean()).max())
    ok &= spread <= 0.03
    verdict(8, "end-to-end desk-scale transfer", bool(ok),
            "; ".join(parts) + f"; max deviation from seed mean {spread:.3f}")


def test_criterion_9_determinism(runs):
    run = runs[SEEDS[0]][0]
    cfg = run.cfg.replace(rl_max_steps=200)
    logs = []
    for attempt in ("first", "second"):
        task = P.load_task(cfg)
        rl_dir = cfg.out_dir / f"determinism_{attempt}"
        P.run_rl(cfg, task, run.models(), rl_dir)
        logs.append(((rl_dir / P.TRAIN_LOG).read_bytes(), (rl_dir / P.EVAL_LOG).read_bytes()))
    rows = logs[0][0].count(b"\n") - 1
    same = logs[0] == logs[1]
    verdict(9, "determinism", same and rows == 200,
            f"{rows} logged updates; training and evaluation logs byte-identical: {same}")
