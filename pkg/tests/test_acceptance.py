"""Acceptance criteria 1 to 9, each at its stated tolerance.

Every test records a one-line verdict (see ``acceptance_log``) that is shown
in the pytest terminal summary, then asserts.
"""
import json
import math
import time

import numpy as np
import pytest

from acceptance_log import record
from conftest import random_batch, random_box, random_metric_instance
from gradcheck import fd_check, kink_free_batch
from oracles import brute_force_recall, delta_formula, mc_iou, norm_formula
from sgselfsup import fileio
from sgselfsup.cli import main
from sgselfsup.data import GEOMETRIC, OTHER, POSSESSIVE, SEMANTIC, ImageMeta, PredicateTaxonomy
from sgselfsup.evaluation import (ALPHA_THRESHOLDS, RecallReport, RelationshipPrediction,
                                  alpha_curve, evaluate, predict_dataset, rank_triplets,
                                  recall_at_k)
from sgselfsup.geometry import BoundingBox, iou
from sgselfsup.model import (HeadOutputs, bce_multilabel, evaluate_batch, init_params,
                             load_checkpoint, mse, save_checkpoint, total_loss)
from sgselfsup.spatial import delta_box, normalized_box, spatial_feature
from sgselfsup.synth import SynthConfig, generate
from sgselfsup.trainer import TrainConfig, train

pytestmark = pytest.mark.acceptance


def test_criterion_1_gradient_check():
    t0 = time.process_time()
    worst, seeds = 0.0, 20
    for seed in range(seeds):
        rng = np.random.default_rng(1000 + seed)
        params = init_params(4, 6, 5, seed=seed, semantic_logprior=rng.normal(size=(4, 4, 6)))
        batch = kink_free_batch(lambda r: random_batch(r, 2, 4, 5, 6), params, rng)
        weights = (1.0, 1.0, 1.0, 1.0)
        worst = max(worst, fd_check(params, batch, weights, 100, rng))
    cpu = time.process_time() - t0
    ok = worst <= 1e-4 and cpu < 60
    record(1, ok, f"worst relative error {worst:.2e} over 100 params x {seeds} seeds "
                  f"(limit 1e-4), {cpu:.1f}s CPU (limit 60s)")
    assert ok


def test_criterion_2_geometry_oracles():
    rng = np.random.default_rng(2)
    worst_iou = 0.0
    for _ in range(1000):
        b1 = random_box(rng, min_size=2.0)
        # half the pairs are perturbed copies so the estimator sees a spread of IoUs
        if rng.random() < 0.5:
            dx, dy = rng.uniform(-0.5, 0.5, 2) * (b1.w, b1.h)
            b2 = BoundingBox(max(b1.x + dx, 0.0), max(b1.y + dy, 0.0),
                             b1.w * rng.uniform(0.5, 1.5), b1.h * rng.uniform(0.5, 1.5))
        else:
            b2 = random_box(rng, min_size=2.0)
        est = mc_iou(tuple(b1.as_array()), tuple(b2.as_array()), 10**6, rng)
        worst_iou = max(worst_iou, abs(est - iou(b1, b2)))
    worst_formula, dims = 0.0, set()
    img = ImageMeta("x", 100, 100)
    for _ in range(1000):
        b1, b2 = random_box(rng), random_box(rng)
        worst_formula = max(
            worst_formula,
            np.max(np.abs(delta_box(b1, b2) - delta_formula(tuple(b1.as_array()),
                                                            tuple(b2.as_array())))),
            np.max(np.abs(normalized_box(b1, img) - norm_formula(tuple(b1.as_array()), 100, 100))))
        dims.add(spatial_feature(b1, b2, img).shape)
    ok = worst_iou <= 1e-2 and worst_formula <= 1e-12 and dims == {(22,)}
    record(2, ok, f"max |IoU - MC| {worst_iou:.2e} (limit 1e-2); max formula gap "
                  f"{worst_formula:.1e} (limit 1e-12); dims {sorted(dims)}")
    assert ok


def test_criterion_3_loss_identities():
    rng = np.random.default_rng(3)
    exact = True
    for _ in range(200):
        params = init_params(3, 5, 4, seed=int(rng.integers(1 << 30)))
        lb, *_ = evaluate_batch(params, random_batch(rng, 7, 3, 4, 5))
        exact &= lb.L == lb.L0 + lb.L_task1 + lb.L_task2 + lb.L_task3 + lb.L_task4
    heads = HeadOutputs(np.array([[0.5, 0.5]]), np.array([0.5]), np.array([0.5]), np.array([0.5]))
    lb = total_loss(np.array([[0.5, 0.5]]), [0], heads,
                    {"relpos": [[1, 0]], "distance": [0.0], "iou": [0.0]})
    exact &= lb.L == lb.L0 + lb.L_task1 + lb.L_task2 + lb.L_task3 + lb.L_task4
    bce = bce_multilabel([[0.5, 0.5]], [[1, 0]])
    bce_ok = abs(bce - 2 * math.log(2)) <= 1e-12
    mse_ok = mse([0.5], [0.0]) == 0.25
    ok = exact and bce_ok and mse_ok
    record(3, ok, f"L identity exact on 201 batches: {exact}; BCE fixture {bce!r} vs 2ln2; "
                  f"MSE fixture {mse([0.5], [0.0])!r}")
    assert ok


def test_criterion_4_metric_oracle():
    rng = np.random.default_rng(4)
    checks = mismatches = 0
    for mode in ("predcls", "sgcls", "sgdet"):
        for _ in range(200):
            ann, preds, gobj, opreds = random_metric_instance(rng, mode, max_objects=5,
                                                              max_predicates=8)
            for gc in (True, False):
                ranked = rank_triplets(preds, gc)
                for k in (1, 5, 20):
                    got = recall_at_k(ann, ranked, k, mode)
                    ref = brute_force_recall(gobj, list(ann.triplets), opreds, k, mode, gc)
                    checks += 1
                    if not ((math.isnan(got) and math.isnan(ref)) or got == ref):
                        mismatches += 1
    ok = mismatches == 0
    record(4, ok, f"{checks - mismatches}/{checks} exact matches (200 instances x 3 modes x "
                  f"K in 1,5,20 x graph constraint on/off)")
    assert ok


def test_criterion_5_learnability(tmp_path):
    t0 = time.perf_counter()
    train_set = generate(SynthConfig(n_images=2000, seed=0)).dataset
    test_set = generate(SynthConfig(n_images=500, seed=99)).dataset
    tax = train_set.taxonomy
    types = {tax.type_of(r) for r in range(tax.n_predicates)}
    epochs = 30
    cfg = TrainConfig(learning_rate=0.02, epochs=epochs, seed=0)
    _, params = train(train_set, cfg)
    preds = predict_dataset(params, test_set)
    r20 = evaluate(test_set, preds, "predcls", (20,)).recall[20]
    curve = alpha_curve(preds, tax)
    fileio.write_table(tmp_path / "alpha_full.csv", curve.HEADER, curve.rows())

    cfg0 = TrainConfig(learning_rate=0.02, epochs=epochs, seed=0, loss_weights=(0, 0, 0, 0))
    report0, params0 = train(train_set, cfg0)
    curve0 = alpha_curve(predict_dataset(params0, test_set), tax)
    fileio.write_table(tmp_path / "alpha_base.csv", curve0.HEADER, curve0.rows())
    elapsed = time.perf_counter() - t0

    emitted = all(len(fileio.read_table(tmp_path / f)[1]) == len(ALPHA_THRESHOLDS)
                  for f in ("alpha_full.csv", "alpha_base.csv"))
    ok = (r20 >= 0.95 and elapsed < 300 and emitted and len(report0.epochs) == epochs
          and tax.n_predicates >= 6 and {GEOMETRIC, POSSESSIVE} <= types)
    record(5, ok, f"held-out PREDCLS R@20 {r20:.4f} (need >= 0.95) after {epochs} epochs; "
                  f"zero-weight run trained; alpha curves emitted: {emitted}; "
                  f"{elapsed:.0f}s wall (limit 300s)")
    assert ok


GRID = ["1,0,0,0", "0,0,1,0", "1,0,1,0", "1,1,1,0", "1,0,1,1", "1,1,1,1"]


def test_criterion_6_ablation_grid(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--n-images", "60", "--seed", "6"]) == 0
    ds = str(tmp_path / "dataset.jsonl")
    runs = [("w" + w.replace(",", ""), ["--weights", w]) for w in GRID]
    runs += [("no_spatial", ["--no-spatial"]), ("no_visual", ["--no-visual"])]
    schemas, codes = set(), []
    for name, flags in runs:
        out = tmp_path / name
        codes.append(main(["train", "--dataset", ds, "--out", str(out), "--epochs", "2",
                           "--pairs-per-image", "20", *flags]))
        codes.append(main(["eval", "--dataset", ds, "--checkpoint", str(out / "model.ckpt"),
                           "--out", str(out)]))
        header, rows = fileio.read_table(out / "recall_predcls.csv")
        report = json.loads((out / "report_predcls.json").read_text())
        schemas.add((tuple(header), len(rows), tuple(sorted(report)),
                     tuple(sorted(report["per_type"]))))
    ok = all(c == 0 for c in codes) and len(schemas) == 1 and \
        next(iter(schemas))[0] == RecallReport.HEADER
    record(6, ok, f"{len(runs)} runs (6 task rows + 2 module ablations), exit codes "
                  f"{sorted(set(codes))}, {len(schemas)} distinct report schema(s)")
    assert ok


def _p(r, conf, R=4):
    p = np.full(R, (1 - conf) / (R - 1))
    p[r] = conf
    box = BoundingBox(0, 0, 1, 1)
    return RelationshipPrediction("i", 0, 1, box, box, 0, 0, 1.0, 1.0, p)


def test_criterion_7_alpha_analytics():
    tax = PredicateTaxonomy(("on", "has", "eating", "for"),
                            (GEOMETRIC, POSSESSIVE, SEMANTIC, OTHER))
    fixture = ([_p(0, 0.95)] + [_p(0, 0.6)] * 3 + [_p(1, 0.95), _p(1, 0.6), _p(2, 0.95),
                                                    _p(0, 0.3)])
    curve = alpha_curve(fixture, tax, (0.5, 0.9))
    hand = curve.alpha == [2.0, 1.0] and curve.counts[GEOMETRIC] == [4, 1] \
        and curve.counts[POSSESSIVE] == [2, 1]
    rng = np.random.default_rng(7)
    preds = [_p(int(rng.integers(4)), float(rng.uniform(0.25, 1.0))) for _ in range(2000)]
    grid = alpha_curve(preds, tax, ALPHA_THRESHOLDS)
    monotone = all(all(b <= a for a, b in zip(c, c[1:])) for c in grid.counts.values())
    ok = hand and monotone
    record(7, ok, f"hand fixture alpha {curve.alpha} (expect [2.0, 1.0]); per-type counts "
                  f"nonincreasing over the 11-threshold grid: {monotone}")
    assert ok


def test_criterion_8_determinism(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--n-images", "40", "--seed", "8",
                 "--box-jitter", "0.05", "--class-sigma", "0.5"]) == 0
    ds, dets = str(tmp_path / "dataset.jsonl"), str(tmp_path / "detections.json")
    for name in ("a", "b"):
        out = str(tmp_path / name)
        assert main(["train", "--dataset", ds, "--out", out, "--epochs", "3",
                     "--pairs-per-image", "30", "--seed", "5"]) == 0
        ck = str(tmp_path / name / "model.ckpt")
        for mode in ("predcls", "sgcls", "sgdet"):
            assert main(["eval", "--dataset", ds, "--checkpoint", ck, "--mode", mode,
                         "--detections", dets, "--out", out]) == 0
        assert main(["analyze", "--dataset", ds, "--checkpoint", ck, "--out", out]) == 0
        assert main(["export-features", "--dataset", ds, "--checkpoint", ck,
                     "--threshold", "0.2", "--out", out]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = [f for f in files if f != "train_log.csv"
            and (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()]
    strip = lambda p: [l.rsplit(",", 1)[0] for l in p.read_text().splitlines()]  # noqa: E731
    log_same = strip(tmp_path / "a" / "train_log.csv") == strip(tmp_path / "b" / "train_log.csv")
    ok = len(same) == len(files) - 1 and log_same and "features.csv" in same \
        and "model.ckpt" in same
    record(8, ok, f"{len(same)}/{len(files) - 1} output files byte-identical across two runs; "
                  f"train log identical apart from the seconds column: {log_same}")
    assert ok


def test_criterion_9_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    ds_ok = ck_ok = 0
    for i in range(50):
        cfg = SynthConfig(n_images=int(rng.integers(1, 6)), seed=int(rng.integers(1 << 30)),
                          d_vis=int(rng.integers(0, 6)), n_classes=int(rng.integers(3, 8)),
                          box_jitter=float(rng.choice([0.0, 0.1])))
        ds = generate(cfg).dataset
        fileio.save_dataset(ds, tmp_path / "d.jsonl")
        back = fileio.load_dataset(tmp_path / "d.jsonl")
        fileio.save_dataset(back, tmp_path / "d2.jsonl")
        ds_ok += back == ds and (tmp_path / "d.jsonl").read_bytes() == \
            (tmp_path / "d2.jsonl").read_bytes()

        d_vis = max(cfg.d_vis, 1)
        params = init_params(cfg.n_classes, 8, d_vis, seed=i,
                             semantic_logprior=rng.normal(size=(cfg.n_classes,) * 2 + (8,)),
                             use_spatial=bool(i % 3), use_visual=bool((i + 1) % 3))
        save_checkpoint(params, tmp_path / "m.ckpt")
        loaded = load_checkpoint(tmp_path / "m.ckpt")
        arrays_equal = all(
            n1 == n2 and a1.dtype == a2.dtype and a1.shape == a2.shape
            and a1.tobytes() == a2.tobytes()
            for (n1, a1), (n2, a2) in zip(params.named_arrays(), loaded.named_arrays()))
        fields_equal = (loaded.specs == params.specs and loaded.n_classes == params.n_classes
                        and loaded.n_predicates == params.n_predicates
                        and loaded.d_vis == params.d_vis and loaded.seed == params.seed
                        and loaded.semantic_logprior.tobytes() == params.semantic_logprior.tobytes()
                        and len(list(loaded.named_arrays())) == len(list(params.named_arrays())))
        ck_ok += arrays_equal and fields_equal
    ok = ds_ok == 50 and ck_ok == 50
    record(9, ok, f"dataset round trips bit-exact {ds_ok}/50; checkpoint round trips "
                  f"bit-exact {ck_ok}/50")
    assert ok
