"""Margin-form square solver on true translations, its cyclic twin, and the
hinge reference: count laws, dense oracles, the region-growth gap, locate."""

import numpy as np
import pytest

from tracklab.features import ImageFrame
from tracklab.geometry import BBox, SampleWeights, gaussian_labels, iou_labels
from tracklab.struck import (
    GapPoint,
    SampleSet,
    StruckModel,
    asymptotic_gap,
    build_sample_set,
    hinge_objective,
    labels_at_offsets,
    locate,
    region_cell_dims,
    sample_set_from_map,
    scores,
    solve_struck_hinge_small,
    solve_struck_square,
    solve_struck_square_cyclic,
    solve_struck_square_multi,
    square_objective,
)

from instances import smooth_texture
from oracles import (cyclic_margin_solution, dense_margin_solution,
                     multi_margin_solution)

LAM = 10.0
CUTOFF = 0.7  # texture band limit for the struck suite; see test_asymptotic_gap


def make_samples(seed, region, box, stride=1, n_ch=1, cutoff=CUTOFF):
    rng = np.random.default_rng(seed)
    need = (2 * region[0] - box[0], 2 * region[1] - box[1])
    sup = np.stack([smooth_texture(rng, need, cutoff=cutoff) for _ in range(n_ch)])
    return sample_set_from_map(sup, region, box, stride=stride)


# ---------------------------------------------------------------- sample sets

def test_single_sample_is_centered():
    s = make_samples(0, (8, 8), (4, 4), stride=8)
    assert s.n_samples == 1
    assert tuple(s.offsets[0]) == (0, 0)
    sh = s.super_map.shape[1]
    r0 = (sh - 8) // 2
    np.testing.assert_array_equal(s.sample(0), s.super_map[:, r0:r0 + 8, r0:r0 + 8])


def test_stride_one_count_law():
    for region, box in (((4, 4), (2, 2)), ((16, 12), (8, 4)), ((20, 20), (8, 8))):
        s = make_samples(1, region, box)
        expected = (region[0] - box[0] + 1) * (region[1] - box[1] + 1)
        assert s.n_samples == expected


def test_stride_four_lattice_matches_enumeration():
    s = make_samples(2, (20, 20), (8, 8), stride=4)
    assert s.n_samples == 16
    # brute enumeration: top-left box positions 0,4,8,12 in a 20-cell region,
    # recentered by half the 12-cell play
    expected = sorted((r - 6, c - 6) for r in range(0, 13, 4) for c in range(0, 13, 4))
    assert sorted(map(tuple, s.offsets)) == expected


def test_offset_outside_region_rejected():
    sup = np.zeros((1, 12, 12))
    with pytest.raises(ValueError, match="outside the region"):
        SampleSet(sup, np.array([[4, 0]]), (8, 8), (4, 4))


def test_windows_match_samples():
    s = make_samples(3, (10, 8), (4, 2), n_ch=2)
    wins = s.windows()
    for i in range(s.n_samples):
        np.testing.assert_array_equal(wins[i], s.sample(i))


def test_center_index_is_zero_offset():
    s = make_samples(4, (12, 12), (6, 6))
    assert tuple(s.offsets[s.center_index]) == (0, 0)


def test_labels_at_offsets_match_gaussian_formula():
    s = make_samples(5, (12, 12), (4, 4))
    sigma = 1.3
    vals = labels_at_offsets(gaussian_labels((12, 12), (0, 0), sigma), s)
    expected = np.exp(-(s.offsets[:, 0] ** 2 + s.offsets[:, 1] ** 2) / (2 * sigma ** 2))
    np.testing.assert_allclose(vals, expected, atol=1e-12)


def test_build_sample_set_pixel_dims():
    rng = np.random.default_rng(6)
    frame = ImageFrame(np.clip(0.5 + smooth_texture(rng, (160, 160)), 0.0, 1.0))
    box = BBox(64.0, 64.0, 32.0, 32.0)
    assert region_cell_dims(box) == ((8, 8), (20, 20))
    assert region_cell_dims(box, (2.0, 3.0)) == ((8, 8), (16, 24))
    s = build_sample_set(frame, box, stride=1, feature_kind="gray")
    assert s.region_shape == (20, 20)
    assert s.n_samples == 13 * 13
    one = build_sample_set(frame, box, stride=100, feature_kind="gray")
    assert one.n_samples == 1


# -------------------------------------------------------------- square solver

def test_square_solver_matches_dense_oracle():
    for seed in range(5):
        n_ch = 1 + seed % 2
        s = make_samples(seed, (6, 6), (2, 2), n_ch=n_ch)
        labels = gaussian_labels((6, 6), (0, 0), 1.0)
        model = solve_struck_square(s, labels, LAM)
        patches = [s.sample(i).copy() for i in range(s.n_samples)]
        targets = 1.0 - labels_at_offsets(labels, s)
        oracle = dense_margin_solution(patches, s.center_index, targets,
                                       model.regularizer.values, LAM,
                                       1.0 / s.n_samples)
        err = np.linalg.norm(model.weights - oracle) / np.linalg.norm(oracle)
        assert err <= 1e-6


def test_square_dense_and_cg_agree():
    s = make_samples(7, (16, 16), (8, 8))
    labels = gaussian_labels((16, 16), (0, 0), 1.0)
    dense = solve_struck_square(s, labels, LAM, solver="dense")
    fast = solve_struck_square(s, labels, LAM, solver="cg")
    scale = np.linalg.norm(dense.weights)
    assert np.linalg.norm(dense.weights - fast.weights) <= 1e-4 * scale


def test_square_resolve_is_idempotent():
    s = make_samples(8, (8, 8), (4, 4))
    labels = gaussian_labels((8, 8), (0, 0), 1.0)
    first = solve_struck_square(s, labels, LAM)
    again = solve_struck_square(s, labels, LAM)
    np.testing.assert_array_equal(first.weights, again.weights)


def test_single_sample_with_unit_label():
    # the centered sample's difference row vanishes, so its prediction is
    # pinned at 1 and the loss-dominated limit is exact
    s = make_samples(9, (8, 8), (4, 4), stride=8)
    labels = gaussian_labels((8, 8), (0, 0), 1.0)
    model = solve_struck_square(s, labels, 1e8)
    pred = 1.0 - np.sum((s.sample(s.center_index) - s.sample(0)) * model.weights)
    assert abs(pred - 1.0) <= 1e-8
    assert np.linalg.norm(model.weights) <= 1e-8


def test_annulus_energy_is_negligible():
    s = make_samples(10, (12, 12), (4, 4))
    labels = gaussian_labels((12, 12), (0, 0), 1.0)
    assert solve_struck_square(s, labels, LAM).annulus_energy() <= 1e-6
    base = s.sample(s.center_index)
    twin = solve_struck_square_cyclic(base, (4, 4), labels, LAM)
    assert twin.annulus_energy() <= 1e-6


def test_square_objective_decreases_from_perturbation():
    s = make_samples(11, (8, 8), (4, 4))
    labels = gaussian_labels((8, 8), (0, 0), 1.0)
    model = solve_struck_square(s, labels, LAM)
    best = square_objective(model, s, labels, LAM)
    rng = np.random.default_rng(11)
    for _ in range(5):
        bumped = StruckModel(
            model.weights + 1e-3 * rng.standard_normal(model.weights.shape)
            * (model.regularizer.values == 1.0),
            model.regularizer, model.box_shape)
        assert square_objective(bumped, s, labels, LAM) > best


# --------------------------------------------------------------- cyclic twin

def test_cyclic_twin_matches_loop_oracle():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        base = np.stack([smooth_texture(rng, (6, 6), cutoff=CUTOFF)
                         for _ in range(1 + seed % 2)])
        labels = gaussian_labels((6, 6), (0, 0), 1.0)
        twin = solve_struck_square_cyclic(base, (2, 2), labels, LAM)
        targets = 1.0 - labels.values
        oracle = cyclic_margin_solution(base, targets, twin.regularizer.values,
                                        LAM, 1.0 / 36.0)
        err = np.linalg.norm(twin.weights - oracle) / np.linalg.norm(oracle)
        assert err <= 1e-6


def test_cyclic_twin_dense_and_cg_agree():
    rng = np.random.default_rng(12)
    base = smooth_texture(rng, (16, 16), cutoff=CUTOFF)
    labels = gaussian_labels((16, 16), (0, 0), 1.0)
    dense = solve_struck_square_cyclic(base, (8, 8), labels, LAM, solver="dense")
    fast = solve_struck_square_cyclic(base, (8, 8), labels, LAM, solver="cg")
    scale = np.linalg.norm(dense.weights)
    assert np.linalg.norm(dense.weights - fast.weights) <= 1e-4 * scale


def test_cyclic_design_shares_non_wrapping_rows():
    # a cyclic shift whose box stays inside the region sees exactly the same
    # box content as the true translation at that offset
    s = make_samples(13, (8, 8), (4, 4))
    base = s.sample(s.center_index)
    inside = np.zeros((8, 8), dtype=bool)
    inside[2:6, 2:6] = True
    for i in range(s.n_samples):
        dr, dc = s.offsets[i]
        shifted = np.roll(np.roll(base, -dr, axis=1), -dc, axis=2)
        np.testing.assert_allclose(shifted[:, inside], s.sample(i)[:, inside],
                                   atol=1e-12)


# ------------------------------------------------------------ asymptotic gap

def test_asymptotic_gap_monotone_with_exact_ratios():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        sup = smooth_texture(rng, (120, 120), cutoff=CUTOFF)
        points = asymptotic_gap(sup, 8, (2, 4, 8), lam=1.0, sigma=0.5)
        gaps = [p.gap for p in points]
        assert all(b <= a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] <= 0.15
        for p in points:
            assert p.sample_ratio == (p.region_cells - 8 + 1) / p.region_cells


def test_asymptotic_gap_ratio_arithmetic():
    rng = np.random.default_rng(0)
    sup = smooth_texture(rng, (72, 72), cutoff=CUTOFF)
    w = 8
    points = asymptotic_gap(sup, w, (1, 4.5), lam=1.0)
    assert points[0].sample_ratio == 1.0 / w
    assert points[1].region_cells == 36
    assert points[1].sample_ratio == 29.0 / 36.0


def test_asymptotic_gap_rejects_small_texture():
    with pytest.raises(ValueError, match="too small"):
        asymptotic_gap(np.zeros((16, 16)), 8, (2,), lam=1.0)


# -------------------------------------------------------------- hinge solver

def test_hinge_inactive_when_labels_saturate():
    s = make_samples(14, (6, 6), (2, 2))
    ones = gaussian_labels((6, 6), (0, 0), 1e9)  # effectively all-ones map
    model, info = solve_struck_hinge_small(s, ones, LAM, return_info=True)
    assert info.objective <= 1e-12
    assert np.linalg.norm(model.weights) <= 1e-6


def test_hinge_matches_restricted_grid_search():
    for seed in range(3):
        s = make_samples(seed + 20, (4, 4), (2, 2))
        labels = iou_labels((4, 4), (0, 0), 2, 2)
        model, info = solve_struck_hinge_small(s, labels, LAM, return_info=True)
        square = solve_struck_square(s, labels, LAM)
        reg = square.regularizer.values
        u_sq = (square.weights * reg[None]).ravel()
        rng = np.random.default_rng(seed)
        d = rng.standard_normal(u_sq.shape)
        d -= (d @ u_sq) / (u_sq @ u_sq) * u_sq
        d *= np.linalg.norm(u_sq) / np.linalg.norm(d)
        best = np.inf
        for a in np.linspace(0.0, 1.5, 31):
            for b in np.linspace(-0.5, 0.5, 21):
                u = a * u_sq + b * d
                candidate = StruckModel(u.reshape(square.weights.shape) / reg[None],
                                        square.regularizer, square.box_shape)
                best = min(best, hinge_objective(candidate, s, labels, LAM))
        assert info.objective <= best * 1.01


def test_hinge_budget_exhaustion_is_reported():
    s = make_samples(15, (6, 6), (2, 2))
    labels = gaussian_labels((6, 6), (0, 0), 1.0)
    model, info = solve_struck_hinge_small(s, labels, LAM, max_iters=3,
                                           return_info=True)
    assert not info.converged
    assert info.iterations == 3
    assert np.isfinite(info.objective)
    assert model.weights.shape == (1, 6, 6)


def test_hinge_rejects_large_sample_sets():
    s = make_samples(16, (20, 20), (4, 4))  # 289 samples
    labels = gaussian_labels((20, 20), (0, 0), 1.0)
    with pytest.raises(ValueError, match="at most 200"):
        solve_struck_hinge_small(s, labels, LAM)


def test_hinge_and_square_locate_agree():
    agree = 0
    for seed in range(10):
        s = make_samples(seed, (12, 12), (6, 6))
        square = solve_struck_square(s, gaussian_labels((12, 12), (0, 0), 1.0), LAM)
        hinge = solve_struck_hinge_small(s, iou_labels((12, 12), (0, 0), 6, 6),
                                         LAM, max_iters=3000)
        off_s, _ = locate(square, s)
        off_h, _ = locate(hinge, s)
        agree += off_s == off_h
    assert agree >= 9


# -------------------------------------------------------------------- locate

def test_locate_training_frame_is_centered():
    for seed in range(5):
        s = make_samples(seed + 30, (24, 24), (8, 8))
        model = solve_struck_square(s, gaussian_labels((24, 24), (0, 0), 1.0), LAM)
        offset, response = locate(model, s)
        assert offset == (0, 0)
        assert response.shape == (s.n_samples,)


def test_locate_noise_frame_scores_low():
    for seed in range(5):
        s = make_samples(seed + 30, (24, 24), (8, 8))
        model = solve_struck_square(s, gaussian_labels((24, 24), (0, 0), 1.0), LAM)
        _, trained = locate(model, s)
        rng = np.random.default_rng(seed + 990)
        noise = sample_set_from_map(smooth_texture(rng, (40, 40), cutoff=CUTOFF),
                                    (24, 24), (8, 8))
        assert scores(model, noise).max() < 0.5 * trained.max()


def test_locate_follows_pixel_translation():
    rng = np.random.default_rng(17)
    image = np.clip(0.5 + smooth_texture(rng, (160, 160)), 0.0, 1.0)
    box = BBox(64.0, 64.0, 32.0, 32.0)
    train = build_sample_set(ImageFrame(image), box, stride=1, feature_kind="gray")
    labels = gaussian_labels(train.region_shape, (0, 0), 1.0)
    model = solve_struck_square(train, labels, LAM)
    moved = np.roll(image, 8, axis=1)  # content moves 8 px right = 2 cells
    probe = build_sample_set(ImageFrame(moved), box, stride=1, feature_kind="gray")
    offset, _ = locate(model, probe)
    assert offset[0] == 0
    assert abs(offset[1] - 2) <= 1


def test_scores_channel_mismatch_rejected():
    s = make_samples(18, (8, 8), (4, 4), n_ch=2)
    labels = gaussian_labels((8, 8), (0, 0), 1.0)
    model = solve_struck_square(s, labels, LAM)
    other = make_samples(18, (8, 8), (4, 4), n_ch=1)
    with pytest.raises(ValueError, match="channel count"):
        scores(model, other)


def test_gap_point_fields():
    p = GapPoint(2.0, 16, 0.1, 9.0 / 16.0)
    assert p.region_mult == 2.0 and p.sample_ratio == 9.0 / 16.0


# ------------------------------------------------------------ pooled training

def test_multi_two_copies_equals_double_lam():
    s = make_samples(20, (6, 6), (2, 2))
    labels = gaussian_labels((6, 6), (0, 0), 1.0)
    pooled = solve_struck_square_multi([s, s], labels, LAM)
    doubled = solve_struck_square(s, labels, 2.0 * LAM)
    np.testing.assert_allclose(pooled.weights, doubled.weights, atol=1e-10)


def test_multi_matches_pooled_oracle():
    a = make_samples(21, (6, 6), (2, 2), stride=1)
    b = make_samples(22, (6, 6), (2, 2), stride=2)
    labels = gaussian_labels((6, 6), (0, 0), 1.0)
    model = solve_struck_square_multi([a, b], labels, LAM)
    groups, centers, targets = [], [], []
    for s in (a, b):
        groups.append([s.sample(i).copy() for i in range(s.n_samples)])
        centers.append(s.center_index)
        targets.append(1.0 - labels_at_offsets(labels, s))
    oracle = multi_margin_solution(groups, centers, targets,
                                   model.regularizer.values, LAM,
                                   [1.0 / a.n_samples, 1.0 / b.n_samples])
    scale = max(np.abs(oracle).max(), 1e-300)
    assert np.abs(model.weights - oracle).max() / scale < 1e-6


def test_multi_dense_and_cg_agree_pooled():
    a = make_samples(23, (6, 6), (2, 2), stride=1, n_ch=2)
    b = make_samples(24, (6, 6), (2, 2), stride=2, n_ch=2)
    labels = gaussian_labels((6, 6), (0, 0), 1.0)
    dense = solve_struck_square_multi([a, b], labels, LAM, solver="dense")
    itr = solve_struck_square_multi([a, b], labels, LAM, solver="cg")
    scale = max(np.abs(dense.weights).max(), 1e-300)
    assert np.abs(dense.weights - itr.weights).max() / scale < 1e-4


def test_multi_weight_broadcast():
    a = make_samples(25, (6, 6), (2, 2))
    b = make_samples(26, (6, 6), (2, 2))
    labels = gaussian_labels((6, 6), (0, 0), 1.0)
    shared = SampleWeights(1.0, a.n_samples)
    one = solve_struck_square_multi([a, b], labels, LAM, weights=shared)
    two = solve_struck_square_multi([a, b], labels, LAM, weights=[shared, shared])
    np.testing.assert_array_equal(one.weights, two.weights)


def test_multi_geometry_mismatch_rejected():
    a = make_samples(27, (6, 6), (2, 2))
    b = make_samples(27, (8, 8), (2, 2))
    labels = gaussian_labels((6, 6), (0, 0), 1.0)
    with pytest.raises(ValueError, match="share region"):
        solve_struck_square_multi([a, b], labels, LAM)
    with pytest.raises(ValueError, match="at least one"):
        solve_struck_square_multi([], labels, LAM)
