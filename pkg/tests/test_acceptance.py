"""Acceptance gate: one test per criterion, one printed PASS/FAIL line each.

These are the slow, end-to-end checks (two of them train real models); run
with ``-s`` to see the per-criterion lines. Everything is seeded and
single-threaded, so reruns are exact.
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import softmax as scipy_softmax

from conftest import make_sentence, make_tree_heads
from depcause import autodiff as ad
from depcause.autodiff import Tensor, finite_diff_check
from depcause.cli import main
from depcause.corpus import (
    CAUSE,
    EFFECT,
    OTHER,
    build_adjacency,
    label_sequence,
    parse_conllu,
    read_jsonl,
    split_dataset,
    write_conllu,
    write_jsonl,
)
from depcause.encoding import build_vocab, encode
from depcause.evaluation import Prediction, evaluate, exact_match, gold_sets, token_prf
from depcause.generator import generate, instantiate, DEFAULT_TEMPLATES
from depcause.model import (
    HeadParams,
    Model,
    ModelConfig,
    NormParams,
    RightLayerParams,
    dep_attention,
    fuse,
    model_loss,
    paper_add_norm,
    right_encode,
)
from depcause.training import TrainConfig, train


def report_line(number: int, ok: bool, detail: str) -> None:
    print(f"\ncriterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {number}: {detail}"


def five_token_sentence():
    lead_to = next(t for t in DEFAULT_TEMPLATES if t.name == "lead_to")
    return instantiate(lead_to, (("diabetes", "NOUN"),), (("blindness", "NOUN"),), "fix")


def hop_distances(adj: np.ndarray) -> np.ndarray:
    """BFS hop counts over the adjacency graph, self-loops ignored."""
    n = adj.shape[0]
    edges = adj & ~np.eye(n, dtype=bool)
    dist = np.full((n, n), 10**9)
    for start in range(n):
        dist[start, start] = 0
        frontier = [start]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for w in np.flatnonzero(edges[u]):
                    if dist[start, w] > d:
                        dist[start, w] = d
                        nxt.append(w)
            frontier = nxt
    return dist


def test_criterion_1_gradient_correctness():
    started = time.perf_counter()
    sentence = five_token_sentence()
    vocab = build_vocab([sentence])
    cfg = ModelConfig(width=16, left_layers=1, right_layers=1, left_heads=2, ffn_mult=2)
    model = Model(cfg, vocab, seed=0)
    encoded = encode(sentence, vocab)
    adj = build_adjacency(sentence, vocab.max_len)
    labels = label_sequence(sentence, vocab.max_len)

    def rebuild():
        return model.loss(encoded, adj, labels)[0]

    check = finite_diff_check(rebuild, model.named_parameters(), step=1e-5, tolerance=1e-4)
    elapsed = time.perf_counter() - started
    ok = check.passed and elapsed < 60.0
    report_line(1, ok,
                f"all {len(check.entries)} parameters match finite differences, "
                f"max rel err {check.max_rel_err:.2e} < 1e-4 in {elapsed:.1f}s")


def test_criterion_2_attention_mask_invariants():
    rng = np.random.default_rng(0)
    cfg = ModelConfig(width=16, right_layers=1, right_heads=1, left_heads=2, ffn_mult=2)
    layer = RightLayerParams.fresh(cfg, rng)
    worst_sum, worst_off, worst_dense = 0.0, 0.0, 0.0
    for _ in range(200):
        n = int(rng.integers(2, 13))
        s = make_sentence(rng, n)
        m = n + 2
        adj = build_adjacency(s, m)
        v = Tensor(rng.normal(size=(m, cfg.width)))
        _, alphas = dep_attention(v, adj, layer, cfg)
        alpha = alphas[0].values
        worst_sum = max(worst_sum, float(np.abs(alpha.sum(axis=1) - 1.0).max()))
        worst_off = max(worst_off, float(np.abs(alpha[~adj]).max()) if (~adj).any() else 0.0)

        dense = np.ones((m, m), dtype=bool)
        _, dense_alphas = dep_attention(v, dense, layer, cfg)
        q = v.values @ layer.query_w.values
        k = v.values @ layer.key_w.values
        reference = scipy_softmax(q @ k.T, axis=1)
        worst_dense = max(worst_dense,
                          float(np.abs(dense_alphas[0].values - reference).max()))
    ok = worst_sum < 1e-9 and worst_off == 0.0 and worst_dense < 1e-8
    report_line(2, ok,
                f"200 random trees: row-sum err {worst_sum:.1e} < 1e-9, "
                f"off-mask max {worst_off:.1e} == 0, dense-vs-reference "
                f"err {worst_dense:.1e} < 1e-8")


def test_criterion_3_locality():
    rng = np.random.default_rng(1)
    checked = 0
    ok = True
    for depth in (1, 2):
        cfg = ModelConfig(width=16, right_layers=depth, right_heads=1,
                          left_heads=2, ffn_mult=2)
        layers = [RightLayerParams.fresh(cfg, rng) for _ in range(depth)]
        for _ in range(25):
            n = int(rng.integers(4, 10))
            s = make_sentence(rng, n)
            m = n + 2
            adj = build_adjacency(s, m)
            hops = hop_distances(adj)
            base = rng.normal(size=(m, cfg.width))
            out0, _ = right_encode(Tensor(base.copy()), adj, layers, cfg)
            j = int(rng.integers(1, n + 1))
            bumped = base.copy()
            bumped[j] += 0.37
            out1, _ = right_encode(Tensor(bumped), adj, layers, cfg)
            changed = np.flatnonzero(np.any(out0.values != out1.values, axis=1))
            if not all(hops[i, j] <= depth for i in changed):
                ok = False
            if j not in changed:  # the perturbed token itself must move
                ok = False
            checked += 1
    report_line(3, ok, f"{checked} perturbations stayed within the "
                       f"right-tower hop radius (depths 1 and 2)")


def test_criterion_4_add_norm_formula():
    rng = np.random.default_rng(2)
    cfg = ModelConfig(width=4)
    worst = 0.0
    for _ in range(50):
        v = rng.normal(size=(3, 4))
        o = rng.normal(size=(3, 4))
        gamma, beta = float(rng.normal()), float(rng.normal())
        norm = NormParams(gain=Tensor(np.array([gamma]), requires_grad=True),
                          bias=Tensor(np.array([beta]), requires_grad=True))
        got = paper_add_norm(Tensor(v), Tensor(o), norm, cfg.eps).values
        expected = np.empty_like(v)
        for i in range(3):
            mu = sum(o[i]) / 4.0
            var = sum((x - mu) ** 2 for x in o[i]) / 4.0
            for j in range(4):
                expected[i, j] = v[i, j] + gamma * (o[i, j] - mu) / (var + cfg.eps) + beta
        worst = max(worst, float(np.abs(got - expected).max()))

    v = rng.normal(size=(3, 4))
    flat = np.repeat(rng.normal(size=(3, 1)), 4, axis=1)  # zero variance rows
    norm = NormParams(gain=Tensor(np.array([1.7]), requires_grad=True),
                      bias=Tensor(np.array([0.25]), requires_grad=True))
    got = paper_add_norm(Tensor(v), Tensor(flat), norm, cfg.eps).values
    flat_exact = np.array_equal(got, v + 0.25)
    ok = worst < 1e-10 and flat_exact
    report_line(4, ok, f"scalar-evaluated formula agrees to {worst:.1e} < 1e-10; "
                       f"zero-variance rows give v + bias exactly")


def test_criterion_5_gate_properties():
    rng = np.random.default_rng(3)
    cfg = ModelConfig(width=8, left_heads=2)
    head = HeadParams.fresh(cfg, rng)
    e_b = Tensor(rng.normal(size=(1000, 8)))
    e_t = Tensor(rng.normal(size=(1000, 8)))
    blended, gate = fuse(e_b, e_t, head, cfg)
    lo = np.minimum(e_b.values, e_t.values) - 1e-12
    hi = np.maximum(e_b.values, e_t.values) + 1e-12
    between = bool(np.all((blended.values >= lo) & (blended.values <= hi)))

    # saturating the gate bias drives sigmoid to exactly 0 or 1
    head.gate_w.values[:] = 0.0
    head.gate_b.values[:] = 800.0
    all_left, gate_one = fuse(e_b, e_t, head, cfg)
    head.gate_b.values[:] = -800.0
    all_right, gate_zero = fuse(e_b, e_t, head, cfg)
    saturated = (np.all(gate_one.values == 1.0) and np.all(gate_zero.values == 0.0)
                 and np.array_equal(all_left.values, e_b.values)
                 and np.array_equal(all_right.values, e_t.values))

    left_mode, _ = fuse(e_b, e_t, head, replace(cfg, gate_mode="left_only"))
    right_mode, _ = fuse(e_b, e_t, head, replace(cfg, gate_mode="right_only"))
    bypass = left_mode is e_b and right_mode is e_t

    ok = between and saturated and bypass
    report_line(5, ok, "blend lies between tower outputs on 1000 rows; "
                       "gate forced to 0/1 reproduces each tower exactly")


def test_criterion_6_loss_sanity():
    uniform = Tensor(np.zeros((6, 4)))
    labels = np.array([1, 2, 3, 4, 2, 3])
    flat = model_loss(uniform, labels).values.item()
    uniform_ok = abs(flat - math.log(4.0)) < 1e-9

    confident = np.full((6, 4), -30.0)
    confident[np.arange(6), labels - 1] = 30.0
    sharp = model_loss(Tensor(confident), labels).values.item()
    ok = uniform_ok and sharp < 0.01
    report_line(6, ok, f"uniform logits give ln4 (err {abs(flat - math.log(4.0)):.1e}); "
                       f"confident logits give {sharp:.2e} < 0.01")


def test_criterion_7_overfit_oracle():
    started = time.perf_counter()
    sentences = generate(8, seed=0)
    cfg = TrainConfig(lr=1e-3, batch_size=8, max_epochs=120, patience=119,
                      seed=0, record_timing=False, model=ModelConfig())
    result = train(cfg, sentences)
    steps = len(result.history)  # one batch of 8 per epoch
    final_loss = result.history[-1].train_loss
    report = evaluate(result.model, sentences)
    elapsed = time.perf_counter() - started
    ok = final_loss < 0.01 and report.exact_match == 1.0 and steps <= 500 and elapsed < 120
    report_line(7, ok, f"train loss {final_loss:.2e} < 0.01 and exact match "
                       f"{report.exact_match:.2f} after {steps} steps in {elapsed:.0f}s")


def test_criterion_8_end_to_end_learning():
    started = time.perf_counter()
    corpus = generate(2000, seed=7)
    train_part, test_part, val_part = split_dataset(corpus, (0.6, 0.3, 0.1), seed=7)
    assert (len(train_part), len(test_part), len(val_part)) == (1200, 600, 200)

    # Both gate modes plateau on validation long before 90 epochs; the
    # cap keeps the two runs well inside the time budget.
    cfg = TrainConfig(lr=1e-3, batch_size=32, max_epochs=90, patience=10,
                      seed=7, record_timing=False, model=ModelConfig())
    full = train(cfg, train_part, val_part)
    full_report = evaluate(full.model, test_part)

    left_cfg = replace(cfg, model=replace(cfg.model, gate_mode="left_only"))
    left = train(left_cfg, train_part, val_part)
    left_report = evaluate(left.model, test_part)

    elapsed = time.perf_counter() - started
    ok = (full_report.exact_match >= 0.90
          and full_report.micro.f1 >= 0.95
          and full_report.exact_match >= left_report.exact_match
          and elapsed < 900)
    report_line(8, ok,
                f"test exact {full_report.exact_match:.3f} >= 0.90, micro F1 "
                f"{full_report.micro.f1:.3f} >= 0.95, full >= left-only "
                f"({full_report.exact_match:.3f} vs {left_report.exact_match:.3f}), "
                f"{elapsed:.0f}s < 900s")


def brute_force_counts(preds, golds):
    """Naive per-class recount used as the metric oracle."""
    tp = {CAUSE: 0, EFFECT: 0}
    fp = {CAUSE: 0, EFFECT: 0}
    fn = {CAUSE: 0, EFFECT: 0}
    exact = 0
    for p, g in zip(preds, golds):
        gold_classes = label_sequence(g, len(g.tokens) + 2)[1:len(g.tokens) + 1]
        for cls in (CAUSE, EFFECT):
            for i in range(len(g.tokens)):
                predicted = p.classes[i] == cls
                actual = gold_classes[i] == cls
                tp[cls] += predicted and actual
                fp[cls] += predicted and not actual
                fn[cls] += not predicted and actual
        gc, ge = gold_sets(g)
        exact += (p.cause_tokens == gc) and (p.effect_tokens == ge)
    return tp, fp, fn, exact / len(golds)


def test_criterion_9_metric_oracle():
    rng = np.random.default_rng(4)
    worst = 0.0
    agree = True
    for _ in range(50):
        n_sent = int(rng.integers(1, 30))
        golds = [make_sentence(rng, int(rng.integers(2, 9)), f"s{i}")
                 for i in range(n_sent)]
        preds = []
        for g in golds:
            if rng.random() < 0.3:  # force some exact hits
                classes = label_sequence(g, len(g.tokens) + 2)[1:len(g.tokens) + 1]
            else:
                classes = rng.integers(2, 5, size=len(g.tokens))
            preds.append(Prediction.from_classes(g.sent_id, classes))
        report = token_prf(preds, golds)
        tp, fp, fn, exact = brute_force_counts(preds, golds)
        tp_all, fp_all, fn_all = sum(tp.values()), sum(fp.values()), sum(fn.values())
        precision = tp_all / (tp_all + fp_all) if tp_all + fp_all else 0.0
        recall = tp_all / (tp_all + fn_all) if tp_all + fn_all else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        worst = max(worst,
                    abs(report.micro.precision - precision),
                    abs(report.micro.recall - recall),
                    abs(report.micro.f1 - f1),
                    abs(report.exact_match - exact))
        if worst > 1e-12:
            agree = False

    # the worked fixture with one deliberately missed effect token
    fixture = five_token_sentence()
    classes = label_sequence(fixture, len(fixture.tokens) + 2)[1:len(fixture.tokens) + 1]
    classes[fixture.effect[0]] = OTHER
    missed = Prediction.from_classes(fixture.sent_id, classes)
    no_partial_credit = not exact_match(missed, fixture)

    ok = agree and no_partial_credit
    report_line(9, ok, f"50 corpora agree with brute-force recount "
                       f"(max abs diff {worst:.1e}); a missed effect token "
                       f"breaks exact match")


def test_criterion_10_determinism(tmp_path, capsys):
    paths = []
    for tag in ("a", "b"):
        data = tmp_path / f"data-{tag}"
        run = tmp_path / f"run-{tag}"
        assert main(["gen-data", "--n", "60", "--seed", "11", "--out", str(data)]) == 0
        assert main(["train", "--train", str(data / "train.jsonl"),
                     "--val", str(data / "val.jsonl"), "--out-dir", str(run),
                     "--max-epochs", "3", "--patience", "2", "--batch-size", "16",
                     "--no-timing"]) == 0
        paths.append((data, run))
    capsys.readouterr()

    (data_a, run_a), (data_b, run_b) = paths
    same = []
    for name in ("train.jsonl", "test.jsonl", "val.jsonl", "manifest.json"):
        same.append((data_a / name).read_bytes() == (data_b / name).read_bytes())
    for name in ("history.csv", "checkpoint/params.bin", "checkpoint/manifest.json",
                 "checkpoint/vocab.json"):
        same.append((run_a / name).read_bytes() == (run_b / name).read_bytes())
    ok = all(same)
    report_line(10, ok, "two seeded runs: corpora, checkpoints, and history "
                        "files are byte-identical")


def test_criterion_11_io_round_trip(tmp_path):
    original = generate(50, seed=13)
    conllu_text = write_conllu(original)
    reparsed = parse_conllu(conllu_text)
    jsonl_path = tmp_path / "round.jsonl"
    write_jsonl(jsonl_path, reparsed)
    final = read_jsonl(jsonl_path)
    ok = len(final) == 50
    for a, b in zip(original, final):
        ok = ok and (a.tokens, a.pos_tags, a.heads, a.cause, a.effect, a.sent_id) == \
            (b.tokens, b.pos_tags, b.heads, b.cause, b.effect, b.sent_id)
    report_line(11, ok, "50 sentences survive CoNLL-U -> internal -> JSONL -> "
                        "internal with tokens, tags, heads, and spans intact")
