"""Acceptance gate: ten go/no-go criteria over the whole package.

Each test checks one criterion end to end, prints a single [PASS]/[FAIL]
line with the measured margin, and enforces its wall-clock budget.  All
thresholds and budgets are pinned here as constants.
"""

import time

import numpy as np
import pytest

from tracklab import dsp
from tracklab.cflbmc import AlmConfig, masked_objective, solve_cflbmc
from tracklab.eval import (
    center_error,
    distance_precision,
    metric_report,
    overlap_metrics,
    run_benchmark,
)
from tracklab.geometry import BBox
from tracklab.pipeline import KINDS, PipelineConfig, init, step, track_sequence
from tracklab.synth import (
    static_sequence,
    translate_sequence,
    write_sequence,
    zoom_sequence,
)
from tracklab.verify import (
    default_cases,
    verify_cflbmc_srdcf,
    verify_label_substitution,
    verify_loss_substitution,
    verify_struck_srdcf,
)

from instances import LAM, alm_instance
from oracles import brute_circ_correlate, dense_masked_ridge

# pinned tolerances
ALM_ORACLE_REL_ERR = 1e-3
SIX_ITER_OBJ_SLACK = 0.01
SIX_ITER_MIN_OK = 18
RELATION_ERR = 1e-3
GAP_FINAL = 0.15
AGREEMENT_RATE = 0.90
DSP_ABS_ERR = 1e-9
TRACK_MAX_CENTER_ERR = 4.0
SCALE_MATCH_RATE = 0.95

# pinned wall-clock budgets (seconds)
BUDGET_ALM_ORACLE = 10.0
BUDGET_SIX_ITER = 10.0
BUDGET_RELATION = 30.0
BUDGET_ASYMPTOTICS = 120.0
BUDGET_LABEL_SUB = 60.0
BUDGET_LOSS_SUB = 180.0
BUDGET_DSP = 5.0
BUDGET_PIPELINE = 120.0
BUDGET_METRICS = 5.0

# instance dims spanning the pledged ranges (grid up to 8x8, active up to 4x4)
ALM_DIMS = (
    ((8, 8), (4, 4)), ((6, 6), (2, 2)), ((8, 6), (4, 2)), ((6, 8), (2, 4)),
    ((7, 7), (3, 3)), ((5, 5), (3, 3)), ((8, 8), (2, 2)), ((4, 4), (2, 2)),
    ((7, 5), (3, 3)), ((8, 4), (4, 2)),
)


def _criterion(name, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    print(line)
    assert passed, line


def test_acceptance_alm_matches_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        grid, active = ALM_DIMS[seed % len(ALM_DIMS)]
        bases, labels, mask = alm_instance(seed, grid=grid, active=active)
        oracle = dense_masked_ridge(list(bases), labels.values,
                                    *mask.active_shape, LAM)
        got = solve_cflbmc(bases, labels, mask, AlmConfig(lam=LAM, iterations=50))
        worst = max(worst, np.linalg.norm(got - oracle) / np.linalg.norm(oracle))
    elapsed = time.perf_counter() - t0
    _criterion("alm-oracle",
               worst <= ALM_ORACLE_REL_ERR and elapsed <= BUDGET_ALM_ORACLE,
               f"worst rel err {worst:.2e} (<= {ALM_ORACLE_REL_ERR}), "
               f"{elapsed:.1f}s of {BUDGET_ALM_ORACLE}s")


def test_acceptance_six_iteration_adequacy():
    t0 = time.perf_counter()
    ok = 0
    for seed in range(20):
        grid, active = ALM_DIMS[seed % len(ALM_DIMS)]
        bases, labels, mask = alm_instance(seed, grid=grid, active=active)
        w6 = solve_cflbmc(bases, labels, mask, AlmConfig(lam=LAM))
        w50 = solve_cflbmc(bases, labels, mask, AlmConfig(lam=LAM, iterations=50))
        o6 = masked_objective(mask.embed(w6), bases, labels.values, LAM)
        o50 = masked_objective(mask.embed(w50), bases, labels.values, LAM)
        ok += abs(o6 - o50) / abs(o50) <= SIX_ITER_OBJ_SLACK
    elapsed = time.perf_counter() - t0
    _criterion("six-iteration-adequacy",
               ok >= SIX_ITER_MIN_OK and elapsed <= BUDGET_SIX_ITER,
               f"{ok}/20 instances within 1% (need >= {SIX_ITER_MIN_OK}), "
               f"{elapsed:.1f}s of {BUDGET_SIX_ITER}s")


def test_acceptance_masking_relation():
    t0 = time.perf_counter()
    cases = [c for c in default_cases()["masking_relation"] if not c.zero_signal]
    assert len(cases) == 10
    results = [verify_cflbmc_srdcf(c) for c in cases]
    worst = max(r["final_error"] for r in results)
    all_pass = all(r["passed"] and r["strictly_decreasing"] for r in results)
    elapsed = time.perf_counter() - t0
    _criterion("masking-relation",
               all_pass and worst <= RELATION_ERR and elapsed <= BUDGET_RELATION,
               f"10 cases, worst final error {worst:.2e} (<= {RELATION_ERR}), "
               f"all sweeps strictly decreasing, {elapsed:.1f}s of {BUDGET_RELATION}s")


def test_acceptance_struck_srdcf_asymptotics():
    t0 = time.perf_counter()
    results = [verify_struck_srdcf(c) for c in default_cases()["struck_asymptotics"]]
    assert len(results) == 10
    worst = max(r["final_gap"] for r in results)
    all_pass = all(r["passed"] and r["non_increasing"] and r["sample_ratios_exact"]
                   for r in results)
    elapsed = time.perf_counter() - t0
    _criterion("struck-srdcf-asymptotics",
               all_pass and worst <= GAP_FINAL and elapsed <= BUDGET_ASYMPTOTICS,
               f"10 textures, gaps non-increasing, worst final gap {worst:.3f} "
               f"(<= {GAP_FINAL}), ratios exact, "
               f"{elapsed:.1f}s of {BUDGET_ASYMPTOTICS}s")


def test_acceptance_label_substitution():
    t0 = time.perf_counter()
    res = verify_label_substitution(default_cases()["label_substitution"])
    elapsed = time.perf_counter() - t0
    _criterion("label-substitution",
               res["n_cases"] == 50 and res["agreement_rate"] >= AGREEMENT_RATE
               and res["passed"] and elapsed <= BUDGET_LABEL_SUB,
               f"agreement {res['agreement_rate']:.3f} over 50 cases "
               f"(>= {AGREEMENT_RATE}), {elapsed:.1f}s of {BUDGET_LABEL_SUB}s")


def test_acceptance_loss_substitution():
    t0 = time.perf_counter()
    res = verify_loss_substitution(default_cases()["loss_substitution"])
    elapsed = time.perf_counter() - t0
    _criterion("loss-substitution",
               res["n_cases"] == 50
               and res["zero_displacement_rate"] >= AGREEMENT_RATE
               and res["passed"] and elapsed <= BUDGET_LOSS_SUB,
               f"identical locate {res['zero_displacement_rate']:.3f} over 50 "
               f"cases (>= {AGREEMENT_RATE}), {elapsed:.1f}s of {BUDGET_LOSS_SUB}s")


def test_acceptance_dsp_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_corr = worst_parseval = 0.0
    for h in range(1, 9):
        for w in range(1, 9):
            f = rng.standard_normal((h, w))
            b = rng.standard_normal((h, w))
            err = np.max(np.abs(dsp.circ_correlate(f, b)
                                - brute_circ_correlate(f, b)))
            worst_corr = max(worst_corr, err)
            spectrum = dsp.dft2(b)
            parseval = abs(np.sum(np.abs(spectrum) ** 2) - np.sum(b ** 2)) \
                / np.sum(b ** 2)
            worst_parseval = max(worst_parseval, parseval)
    elapsed = time.perf_counter() - t0
    _criterion("dsp-correctness",
               worst_corr <= DSP_ABS_ERR and worst_parseval <= DSP_ABS_ERR
               and elapsed <= BUDGET_DSP,
               f"all 64 grids <= 8x8: correlation err {worst_corr:.1e}, "
               f"Parseval err {worst_parseval:.1e} (<= {DSP_ABS_ERR}), "
               f"{elapsed:.1f}s of {BUDGET_DSP}s")


def test_acceptance_pipeline_sanity():
    t0 = time.perf_counter()
    frames, gt = translate_sequence(seed=0, n_frames=100, box_size=(24, 24),
                                    velocity=(3, 4))  # 5 px/frame, <= 8
    worst = {}
    for kind in KINDS:
        boxes = track_sequence(frames, gt[0], PipelineConfig(kind=kind))
        worst[kind] = max(np.hypot(b.center[0] - g.center[0],
                                   b.center[1] - g.center[1])
                          for b, g in zip(boxes, gt))
    zf, zb = zoom_sequence(seed=0, n_frames=30)
    cfg = PipelineConfig(kind="srdcf")
    state = init(zf[0], zb[0], cfg)
    good = 1  # first frame matches by construction
    for t in range(1, len(zf)):
        step(state, zf[t])
        good += abs(np.log(state.scale) / np.log(cfg.scale_step) - t) <= 0.5
    rate = good / len(zf)
    elapsed = time.perf_counter() - t0
    errs = ", ".join(f"{k} {v:.2f}px" for k, v in worst.items())
    _criterion("pipeline-sanity",
               max(worst.values()) <= TRACK_MAX_CENTER_ERR
               and rate >= SCALE_MATCH_RATE and elapsed <= BUDGET_PIPELINE,
               f"100-frame translation: {errs} (<= {TRACK_MAX_CENTER_ERR}px); "
               f"zoom scale match {rate:.3f} (>= {SCALE_MATCH_RATE}), "
               f"{elapsed:.1f}s of {BUDGET_PIPELINE}s")


def test_acceptance_metric_fidelity():
    t0 = time.perf_counter()
    gt = [BBox(float(7 * i), float(3 * i), 20.0, 14.0) for i in range(10)]
    shifted = [b.shifted(3.0, 4.0) for b in gt]
    _, mean_err = center_error(shifted, gt)
    exact_five = mean_err == 5.0
    report = metric_report(gt, gt)
    dp_one = report.distance_precision == 1.0
    auc_strict = report.auc == pytest.approx(20.0 / 21.0)
    rng = np.random.default_rng(3)
    fuzz = [b.shifted(rng.uniform(-30, 30), rng.uniform(-30, 30))
            .scaled_about_center(rng.uniform(0.5, 1.5)) for b in gt]
    errors, _ = center_error(fuzz, gt)
    plot = [distance_precision(errors, t) for t in range(51)]
    prec_monotone = all(b >= a for a, b in zip(plot, plot[1:]))
    succ = overlap_metrics(fuzz, gt).success_plot
    succ_monotone = all(b <= a for a, b in zip(succ, succ[1:]))
    elapsed = time.perf_counter() - t0
    _criterion("metric-fidelity",
               exact_five and dp_one and auc_strict and prec_monotone
               and succ_monotone and elapsed <= BUDGET_METRICS,
               f"(3,4) offset mean error {mean_err} (exactly 5.0), "
               f"pred=gt DP {report.distance_precision} and AUC {report.auc:.6f} "
               f"(= 20/21), plots monotone, {elapsed:.1f}s of {BUDGET_METRICS}s")


def test_acceptance_determinism(tmp_path):
    frames, boxes = static_sequence(seed=0, n_frames=4, box_size=(24, 24))
    write_sequence(tmp_path / "calm", frames, boxes)
    frames, boxes = translate_sequence(seed=1, n_frames=5, box_size=(24, 24),
                                       velocity=(2, 2))
    write_sequence(tmp_path / "walk", frames, boxes)
    seqs = [tmp_path / "calm", tmp_path / "walk"]
    cfg = PipelineConfig(kind="srdcf")
    run_benchmark(seqs, cfg, tmp_path / "a", workers=2)
    run_benchmark(seqs, cfg, tmp_path / "b", workers=1)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    compared = []
    for name in names:
        if name == "timing.json":  # the documented wall-clock sidecar
            continue
        compared.append(name)
        identical = (tmp_path / "a" / name).read_bytes() \
            == (tmp_path / "b" / name).read_bytes()
        if not identical:
            _criterion("determinism", False, f"{name} differs between runs")
    _criterion("determinism", len(compared) >= 9,
               f"two runs, {len(compared)} result files byte-identical")
