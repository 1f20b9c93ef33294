"""Acceptance checks 1-8.  Each test prints one PASS/FAIL line with its measurements.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

from fractions import Fraction
from math import comb
import sys
import time

import numpy as np
import pytest

from hgl.blocking import (
    block_instances,
    build_block,
    estimate_block_accuracy,
    extract_candidates,
    joint_train,
    train_phrase_classifier,
)
from hgl.cli import run
from hgl.corpus import Instance, Span, estimate_noise_rate, snap_to_grid, weak_label
from hgl.denoiser import score_instances, sentence_vocab
from hgl.evaluation import RankedResult, pr_auc, precision_at_recall, span_f1
from hgl.hypergeom import HypergeomParams, pmf, pmf_vector, tail_weights
from hgl.synth import SynthConfig, synth_generate
from hgl.training import TrainConfig, hgl_loss, naive_loss, rank_by_confidence, train, weighted_bce

from helpers import pipeline_gradient_case


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail

    return emit


def test_criterion_1_hypergeometric_oracle(report):
    start = time.perf_counter()
    worst_pmf = worst_sum = worst_omega = 0.0
    for N in range(1, 26):
        for K in range(N + 1):
            for B in range(1, N + 1):
                params = HypergeomParams(N, K, B)
                q = pmf_vector(params)
                exact = [Fraction(comb(K, k) * comb(N - K, B - k), comb(N, B)) for k in range(B + 1)]
                worst_pmf = max(worst_pmf, max(abs(float(e) - pmf(params, k)) for k, e in enumerate(exact)))
                worst_sum = max(worst_sum, abs(float(q.sum()) - 1.0))
                worst_omega = max(worst_omega, abs(float(tail_weights(params).omega.sum()) - B * K / N))
    elapsed = time.perf_counter() - start
    ok = worst_pmf <= 1e-10 and worst_sum <= 1e-9 and worst_omega <= 1e-9 and elapsed < 10
    report(1, ok, f"max pmf err {worst_pmf:.2e}, max |sum Q - 1| {worst_sum:.2e}, "
                  f"max |sum w - BK/N| {worst_omega:.2e}, {elapsed:.1f}s")


def test_criterion_2_gradient_integrity(report):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    errors = [pipeline_gradient_case(rng, B=8, dim=16) for _ in range(100)]
    elapsed = time.perf_counter() - start
    ok = max(errors) < 1e-4 and elapsed < 60
    report(2, ok, f"100 cases (B=8, d=16), worst relative error {max(errors):.2e}, {elapsed:.1f}s")


def test_criterion_3_degeneracy_identities(report):
    rng = np.random.default_rng(3)
    failures = []
    for trial in range(200):
        B = int(rng.integers(1, 40))
        N = B + int(rng.integers(0, 60))
        f = rng.uniform(0, 1, size=B)
        keys = rng.permutation(B)
        ranked = rank_by_confidence(f, keys)
        ones = tail_weights(HypergeomParams(N, N, B)).omega
        zeros = tail_weights(HypergeomParams(N, 0, B)).omega
        if hgl_loss(f, ones, ranked)[0] != naive_loss(f)[0]:
            failures.append(("p=1", trial))
        if hgl_loss(f, zeros, ranked)[0] != weighted_bce(f, 0.0)[0]:
            failures.append(("p=0", trial))
        omega = tail_weights(HypergeomParams(N, int(rng.integers(0, N + 1)), B)).omega
        perm = rng.permutation(B)
        a = hgl_loss(f, omega, ranked)[0]
        b = hgl_loss(f[perm], omega, rank_by_confidence(f[perm], keys[perm]))[0]
        if a != b:
            failures.append(("perm", trial))
    # End to end: p=1 training reproduces naive training batch for batch.
    data = synth_generate(SynthConfig(types=("PER",), noise=0.0, ambiguity=0.0, instances=300), seed=1)
    pool = weak_label(data.train, data.dictionary)
    base = dict(epochs=2, seed=5, batch_size=50)
    h = train({"PER": pool}, {"PER": 1.0}, TrainConfig(loss="hgl", **base))
    n = train({"PER": pool}, {"PER": 1.0}, TrainConfig(loss="naive", **base))
    if [r["batch_losses"] for r in h.log] != [r["batch_losses"] for r in n.log]:
        failures.append(("train p=1", None))
    report(3, not failures, f"200 random batches + training run, exact mismatches: {failures or 'none'}")


def _held_out_auc(model, instances):
    return pr_auc(RankedResult.from_instances(instances, score_instances(model, instances))).auc


def test_criterion_4_synthetic_denoising_trend(report):
    start = time.perf_counter()
    aucs, baselines = {}, {}
    for noise in (0.2, 0.5, 0.8):
        config = SynthConfig(types=("PER",), noise=noise, instances=5000, dev_instances=1000)
        data = synth_generate(config, seed=0)
        pool = weak_label(data.train, data.dictionary)
        held_out = weak_label(data.dev, data.dictionary)
        accuracy = round(1.0 - noise, 2)
        losses = ("hgl", "instance_em", "xr") if noise == 0.8 else ("hgl",)
        for loss in losses:
            cfg = TrainConfig(loss=loss, epochs=20, seed=0, context=1)
            model = train({"PER": pool}, {"PER": accuracy}, cfg).models["PER"]
            auc = _held_out_auc(model, held_out)
            if loss == "hgl":
                aucs[noise] = auc
            else:
                baselines[loss] = auc
    elapsed = time.perf_counter() - start
    ok = (all(a >= 0.95 for a in aucs.values()) and aucs[0.8] >= baselines["instance_em"]
          and aucs[0.8] >= baselines["xr"] and elapsed < 300)
    detail = ", ".join(f"hgl@{k}={v:.3f}" for k, v in aucs.items())
    detail += f"; at 0.8: em={baselines['instance_em']:.3f}, xr={baselines['xr']:.3f}; {elapsed:.0f}s"
    report(4, ok, detail)


def test_criterion_5_blocking(report):
    start = time.perf_counter()
    config = SynthConfig(types=("PER", "LOC", "ORG"), noise=0.3, fn=0.5, instances=2000, dev_instances=500)
    data = synth_generate(config, seed=0)
    matched = weak_label(data.train, data.dictionary)
    dev_matched = weak_label(data.dev, data.dictionary)
    vocab = sentence_vocab(data.train.sentences)
    coverage, joint_auc, plain_auc = {}, {}, {}
    for etype in config.types:
        cands = extract_candidates(data.train, data.dictionary, etype, matched=matched)
        clf = train_phrase_classifier(data.dictionary, etype, cands, seed=0)
        block = build_block(cands, clf, 0.10)
        blocked = block_instances(block, data.train, etype)
        planted = [m for m in data.train.gold_mentions()
                   if m[3] == etype and (etype, data.train[m[0]].tokens[m[1]:m[2]]) not in data.dictionary]
        covered = {(i.sent_index, i.span.start, i.span.end) for i in blocked if i.gold}
        coverage[etype] = sum((si, s, e) in covered for si, s, e, _ in planted) / len(planted)

        dev_cands = extract_candidates(data.dev, data.dictionary, etype, matched=dev_matched)
        p_blk = estimate_block_accuracy(block_instances(build_block(dev_cands, clf, 0.10), data.dev, etype))
        pos = [i for i in matched if i.entity_type == etype]
        cfg = TrainConfig(epochs=20, seed=0, context=1)
        joint, _ = joint_train(pos, blocked, 0.7, p_blk, cfg, entity_type=etype, vocab=vocab)
        plain = train({etype: pos}, {etype: 0.7}, cfg, vocab=vocab).models[etype]
        # Held-out false positives and false negatives together.
        evaluation = [i for i in dev_matched if i.entity_type == etype] + [
            Instance(data.dev[si], si, Span(s, e), etype, gold=True)
            for si, s, e, t in data.dev.gold_mentions()
            if t == etype and (etype, data.dev[si].tokens[s:e]) not in data.dictionary
        ]
        joint_auc[etype] = _held_out_auc(joint, evaluation)
        plain_auc[etype] = _held_out_auc(plain, evaluation)
    elapsed = time.perf_counter() - start
    ok = (all(c >= 0.5 for c in coverage.values()) and all(joint_auc[t] >= plain_auc[t] for t in config.types)
          and elapsed < 300)
    detail = "; ".join(f"{t}: coverage {coverage[t]:.2f}, joint {joint_auc[t]:.3f} vs plain {plain_auc[t]:.3f}"
                       for t in config.types)
    report(5, ok, f"{detail}; {elapsed:.0f}s")


def test_criterion_6_noise_rate_estimation(report):
    flags = [True] * 659 + [False] * 341
    insts = [Instance(None, 0, Span(0, 1), "PER", gold=g) for g in flags]
    entry = estimate_noise_rate(insts, "PER", population=5000)
    problems = []
    if (entry.accuracy, entry.population) != (0.65, 5000):
        problems.append(f"34.1% noise stored as accuracy {entry.accuracy}")
    # Exhaustive grid check: every rational a/n with n <= 200 against exact arithmetic.
    for n in range(1, 201):
        for a in range(n + 1):
            x = Fraction(a, n) * 20
            expected = float((x.numerator * 2 + x.denominator) // (2 * x.denominator) * Fraction(1, 20))
            if snap_to_grid(Fraction(a, n)) != expected:
                problems.append(f"{a}/{n}")
    for value, expected in ((0.20, 0.20), (0.875, 0.90), (0.025, 0.05), (0.975, 1.0), (0.0, 0.0), (1.0, 1.0)):
        if snap_to_grid(value) != expected:
            problems.append(f"{value}->{snap_to_grid(value)}")
    report(6, not problems, "34.1% noise -> 35% stored; 20100 grid cases" + (f"; errors {problems[:5]}" if problems else ""))


def _oracle_ap(flags):
    precisions = [sum(flags[:k]) / k for k in range(1, len(flags) + 1) if flags[k - 1]]
    return sum(precisions) / len(precisions)


def test_criterion_7_metric_oracles(report):
    import itertools

    worst, count = 0.0, 0
    for n in range(1, 13):
        for flags in itertools.product((0, 1), repeat=n):
            if any(flags):
                r = RankedResult.from_scores(np.arange(n, 0, -1, dtype=float), flags)
                worst = max(worst, abs(pr_auc(r).auc - _oracle_ap(flags)))
                count += 1

    def ranked(flags):
        return RankedResult.from_scores(np.arange(len(flags), 0, -1, dtype=float), flags)

    fixtures = [
        pr_auc(ranked([1, 1, 0, 0])).auc == 1.0,
        pr_auc(ranked([0, 1])).auc == 0.5,
        abs(pr_auc(ranked([1, 0, 1, 0])).auc - (1 + 2 / 3) / 2) < 1e-15,
        precision_at_recall(ranked([1, 1, 0]))[0.75] == 1.0,
        precision_at_recall(ranked([1, 0, 1, 0]))[0.5] == 1.0,
        precision_at_recall(ranked([1, 0, 1, 0]))[0.75] == 2 / 3,
        span_f1({(0, 0, 2, "PER")}, {(0, 0, 2, "PER")}) == (1.0, 1.0, 1.0),
        span_f1({(0, 0, 2, "PER"), (0, 3, 4, "ORG")}, {(0, 0, 2, "PER")}) == (0.5, 1.0, 2 / 3),
        span_f1({(0, 0, 3, "PER")}, {(0, 0, 2, "PER")}) == (0.0, 0.0, 0.0),
    ]
    ok = worst <= 1e-12 and all(fixtures)
    report(7, ok, f"{count} exhaustive rankings, max deviation {worst:.1e}; fixtures {sum(fixtures)}/{len(fixtures)}")


def test_criterion_8_determinism(report, tmp_path):
    def tree(path):
        return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}

    cfg = tmp_path / "synth.cfg"
    cfg.write_text("types = PER,ORG\ninstances = 400\ndev_instances = 100\nnoise = PER=0.4,ORG=0.6\nfn = 0.2\n")
    import shutil

    work = tmp_path / "work"
    codes, snapshots = [], []
    for _ in (1, 2):
        d = work / "data"
        codes.append(run(["synth", "--config", str(cfg), "--seed", "11", "--out", str(d)]))
        codes.append(run(["train", "--corpus", str(d / "train.tsv"), "--dict", str(d / "dict.tsv"), "--seed", "11",
                          "--epochs", "3", "--context", "1", "--noise-rate", "PER=0.4", "--noise-rate", "ORG=0.6",
                          "--out", str(work / "models")]))
        codes.append(run(["denoise", "--corpus", str(d / "dev.tsv"), "--dict", str(d / "dict.tsv"),
                          "--models", str(work / "models"), "--out", str(work / "denoised")]))
        snapshots.append({name: tree(work / name) for name in ("data", "models", "denoised")})
        shutil.rmtree(work)
    same = {name: snapshots[0][name] == snapshots[1][name] for name in snapshots[0]}
    ok = codes == [0] * 6 and all(same.values())
    report(8, ok, f"exit codes {codes}; byte-identical: {same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
