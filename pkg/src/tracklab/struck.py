"""Dense square-loss tracker of the Struck family on true translated samples.

The model scores candidate object positions inside a region several times the
object size.  Unlike the correlation-filter solvers, training samples here
are real translated windows of the frame (no cyclic wrap): for a candidate
offset y the sample is the region-size feature patch re-centered on y, and
the model weights live on the region grid with a big-outside-the-box
indicator regularizer pushing all energy into the central object box.

Training minimizes, over region-size per-channel weights w:

    0.5 * sum_l || reg * w_l ||^2
    + 0.5 * lam * alpha * sum_y ( <w, P(y_c) - P(y)> - (1 - label(y)) )^2

where P(y) is the patch at offset y, y_c the centered offset, and label the
per-offset target (Gaussian by default).  The score used for locating is
<w, P(y)>, whose argmax matches the margin form 1 - <w, P(y_c) - P(y)>.

A one-sided hinge variant of the same objective is solved by plain
subgradient descent at small scale as a reference point for loss
substitution experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.sparse.linalg import LinearOperator, cg

from .cflbmc import MaskSpec
from .features import featurize
from .geometry import BBox, LabelMap, SampleWeights, gaussian_labels
from .srdcf import (
    CG_MAXITER,
    CG_RTOL,
    DENSE_UNKNOWN_LIMIT,
    INDICATOR_BIG,
    SpatialRegularizer,
    box_regularizer,
)

HINGE_SAMPLE_LIMIT = 200


@dataclass
class SampleSet:
    """Dense translated samples: a super feature map plus an offset lattice.

    ``super_map`` (L, SH, SW) covers the region window at every offset, so
    sample i's feature patch is a region-size view re-centered on offset i.
    Offsets are signed (dr, dc) in cells relative to the centered position;
    every offset keeps the object box inside its region window.
    """

    super_map: np.ndarray
    offsets: np.ndarray            # (N, 2) signed cells
    region_shape: tuple[int, int]  # (rh, rw) cells
    box_shape: tuple[int, int]     # (bh, bw) cells
    stride: int = 1

    def __post_init__(self):
        self.super_map = np.asarray(self.super_map, dtype=np.float64)
        if self.super_map.ndim == 2:
            self.super_map = self.super_map[None]
        self.offsets = np.asarray(self.offsets, dtype=int)
        rh, rw = self.region_shape
        bh, bw = self.box_shape
        max_r = (rh - bh) // 2
        max_c = (rw - bw) // 2
        if np.any(np.abs(self.offsets[:, 0]) > max_r) or np.any(np.abs(self.offsets[:, 1]) > max_c):
            raise ValueError("an offset pushes the object box outside the region")
        sh, sw = self.super_map.shape[1:]
        if sh < rh + 2 * max_r or sw < rw + 2 * max_c:
            raise ValueError(f"super map {sh} x {sw} too small for region {self.region_shape} "
                             f"with offsets up to ({max_r}, {max_c})")

    @property
    def n_samples(self):
        return len(self.offsets)

    @property
    def n_channels(self):
        return self.super_map.shape[0]

    @property
    def center_index(self):
        d = np.abs(self.offsets).sum(axis=1)
        return int(np.argmin(d))

    def _top_left(self, offset):
        sh, sw = self.super_map.shape[1:]
        rh, rw = self.region_shape
        return ((sh - rh) // 2 + offset[0], (sw - rw) // 2 + offset[1])

    def sample(self, i):
        """Region-size feature patch for offset i: (L, rh, rw) view."""
        r0, c0 = self._top_left(self.offsets[i])
        rh, rw = self.region_shape
        return self.super_map[:, r0:r0 + rh, c0:c0 + rw]

    def windows(self):
        """(N, L, rh, rw) view stack of every sample patch."""
        views = sliding_window_view(self.super_map, self.region_shape, axis=(1, 2))
        tls = np.array([self._top_left(o) for o in self.offsets])
        return np.moveaxis(views[:, tls[:, 0], tls[:, 1]], 0, 1)


def _offset_lattice(span, stride):
    """Stride-spaced offsets covering [0, span], shifted to center the lattice."""
    if span % 2:
        raise ValueError("region minus box extent must be even")
    positions = np.arange(0, span + 1, stride)
    shift = (span - positions[-1]) // 2
    return positions + shift - span // 2


def sample_set_from_map(super_map, region_shape, box_shape, stride=1):
    """SampleSet over every stride-spaced offset of a precomputed feature map."""
    rh, rw = region_shape
    bh, bw = box_shape
    rows = _offset_lattice(rh - bh, stride)
    cols = _offset_lattice(rw - bw, stride)
    offsets = np.array([(r, c) for r in rows for c in cols])
    return SampleSet(super_map, offsets, tuple(region_shape), tuple(box_shape), stride)


def region_cell_dims(box: BBox, region_scale=(2.5, 2.5), cell_size=4):
    """Box and region extents in cells; region keeps an even margin.

    ``region_scale`` is per-axis (height, width); a scalar applies to both.
    """
    if np.isscalar(region_scale):
        region_scale = (region_scale, region_scale)
    bh = max(1, round(box.height / cell_size))
    bw = max(1, round(box.width / cell_size))
    pad_h = max(1, round(bh * (region_scale[0] - 1.0) / 2.0))
    pad_w = max(1, round(bw * (region_scale[1] - 1.0) / 2.0))
    return (bh, bw), (bh + 2 * pad_h, bw + 2 * pad_w)


def build_sample_set(frame, box: BBox, region_scale=(2.5, 2.5), stride=1,
                     cell_size=4, feature_kind="hog9"):
    """Featurize around ``box`` and enumerate every stride-spaced translation
    whose object box stays inside the region window."""
    (bh, bw), (rh, rw) = region_cell_dims(box, region_scale, cell_size)
    sh, sw = 2 * rh - bh, 2 * rw - bw  # region at every offset
    cx, cy = box.center
    crop = BBox(cx - sw * cell_size / 2.0, cy - sh * cell_size / 2.0,
                sw * cell_size, sh * cell_size)
    from .features import extract_patch  # local import to avoid cycle at module load
    block = extract_patch(frame, crop)
    patch = featurize(block, feature_kind, cell_size=cell_size, origin=crop)
    return sample_set_from_map(patch.channels, (rh, rw), (bh, bw), stride)


def labels_at_offsets(labels: LabelMap, samples: SampleSet):
    """Per-sample targets: the label map value at each signed offset."""
    h, w = labels.values.shape
    rows = (labels.center[0] + samples.offsets[:, 0]) % h
    cols = (labels.center[1] + samples.offsets[:, 1]) % w
    return labels.values[rows, cols]


@dataclass
class StruckModel:
    """Trained region-size weights; energy confined to the central object box."""

    weights: np.ndarray                 # (L, rh, rw)
    regularizer: SpatialRegularizer
    box_shape: tuple[int, int]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim == 2:
            self.weights = self.weights[None]

    @property
    def region_shape(self):
        return self.weights.shape[1:]

    def central_block(self):
        return MaskSpec(self.region_shape, self.box_shape).crop(self.weights)

    def annulus_energy(self):
        """Relative weight norm outside the central box."""
        inside = MaskSpec(self.region_shape, self.box_shape).indicator() == 1.0
        total = np.linalg.norm(self.weights)
        if total == 0.0:
            return 0.0
        return float(np.linalg.norm(self.weights[:, ~inside]) / total)


def default_weights(samples: SampleSet):
    return SampleWeights(impact=1.0, pair_count=samples.n_samples)


def _difference_targets(samples: SampleSet, labels: LabelMap):
    """b(y) = 1 - label(y); zero at the centered sample by construction."""
    return 1.0 - labels_at_offsets(labels, samples)


def solve_struck_square(samples: SampleSet, labels: LabelMap, lam,
                        weights: SampleWeights | None = None, big=INDICATOR_BIG,
                        solver="auto"):
    """Minimize the square-loss margin objective over region-size weights.

    Solved in the rescaled variable u = reg * w so the indicator weights do
    not poison conditioning.  "auto" uses dense normal equations up to 4096
    unknowns and conjugate gradient above.
    """
    w = None if weights is None else [weights]
    return solve_struck_square_multi([samples], labels, lam, weights=w, big=big,
                                     solver=solver)


def solve_struck_square_multi(sample_sets, labels: LabelMap, lam, weights=None,
                              big=INDICATOR_BIG, solver="auto"):
    """The square-loss margin objective pooled over several sample sets.

    Each set contributes its own residual block with per-set weight alpha_i
    (default 1/N_i); region, box and channel dims must agree across sets.
    ``weights`` may be a single SampleWeights applied to every set or one
    record per set.
    """
    if not sample_sets:
        raise ValueError("need at least one sample set")
    first = sample_sets[0]
    for s in sample_sets[1:]:
        if (s.region_shape != first.region_shape or s.box_shape != first.box_shape
                or s.n_channels != first.n_channels):
            raise ValueError("sample sets must share region, box and channel dims")
    if weights is None:
        weights = [default_weights(s) for s in sample_sets]
    elif isinstance(weights, SampleWeights):
        weights = [weights] * len(sample_sets)
    if len(weights) != len(sample_sets):
        raise ValueError(f"{len(weights)} weight records for {len(sample_sets)} sets")
    alphas = [w.alpha for w in weights]

    rh, rw = first.region_shape
    n_ch = first.n_channels
    reg = box_regularizer((rh, rw), first.box_shape, big)
    inv = 1.0 / reg.values
    n_unknowns = n_ch * rh * rw
    if solver == "auto":
        solver = "dense" if n_unknowns <= DENSE_UNKNOWN_LIMIT else "cg"

    if solver == "dense":
        inv_flat = np.tile(inv.ravel(), n_ch)
        gram = np.zeros((n_unknowns, n_unknowns))
        rhs = np.zeros(n_unknowns)
        for s, a in zip(sample_sets, alphas):
            b = _difference_targets(s, labels)
            center = s.sample(s.center_index).astype(np.float64)
            wins = s.windows().reshape(s.n_samples, -1)
            diff = (center.ravel()[None, :] - wins) * inv_flat[None, :]
            gram += lam * a * (diff.T @ diff)
            rhs += lam * a * (diff.T @ b)
        gram[np.diag_indices_from(gram)] += 1.0
        u = np.linalg.solve(gram, rhs).reshape(n_ch, rh, rw)
    elif solver == "cg":
        u = _solve_square_multi_cg(sample_sets, alphas, labels, inv, lam)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return StruckModel(u * inv[None], reg, tuple(first.box_shape))


def _solve_square_multi_cg(sample_sets, alphas, labels, inv, lam):
    n_ch = sample_sets[0].n_channels
    rh, rw = sample_sets[0].region_shape
    parts = []
    for s, a in zip(sample_sets, alphas):
        center = s.sample(s.center_index).astype(np.float64)
        parts.append((s.windows(), center, _difference_targets(s, labels), a))

    def apply_diff_t(wins, center, s_vec):
        """X^T s for one set's rows (P(y_c) - P(y)) / reg."""
        return s_vec.sum() * center - np.einsum("n,nlrc->lrc", s_vec, wins)

    def matvec(u_flat):
        v = u_flat.reshape(n_ch, rh, rw) * inv[None]
        acc = np.zeros((n_ch, rh, rw))
        for wins, center, _, a in parts:
            r = np.sum(center * v) - np.einsum("nlrc,lrc->n", wins, v)
            acc += lam * a * apply_diff_t(wins, center, r)
        return u_flat + (acc * inv[None]).ravel()

    rhs = np.zeros((n_ch, rh, rw))
    for wins, center, b, a in parts:
        rhs += lam * a * apply_diff_t(wins, center, b)
    rhs = (rhs * inv[None]).ravel()
    op = LinearOperator((n_ch * rh * rw,) * 2, matvec=matvec, dtype=np.float64)
    u, info = cg(op, rhs, rtol=CG_RTOL, maxiter=CG_MAXITER)
    if info > 0:
        raise RuntimeError(f"conjugate gradient did not reach rtol {CG_RTOL} "
                           f"within {CG_MAXITER} iterations")
    return u.reshape(n_ch, rh, rw)


def square_objective(model: StruckModel, samples: SampleSet, labels: LabelMap, lam,
                     weights: SampleWeights | None = None):
    """The square-loss training objective at a model (for diagnostics)."""
    if weights is None:
        weights = default_weights(samples)
    b = _difference_targets(samples, labels)
    center = samples.sample(samples.center_index)
    resid = np.array([np.sum((center - samples.sample(i)) * model.weights) - b[i]
                      for i in range(samples.n_samples)])
    reg = 0.5 * np.sum((model.regularizer.values[None] * model.weights) ** 2)
    return reg + 0.5 * lam * weights.alpha * np.sum(resid ** 2)


def hinge_objective(model: StruckModel, samples: SampleSet, labels: LabelMap, lam,
                    weights: SampleWeights | None = None):
    """One-sided hinge counterpart of the square objective."""
    if weights is None:
        weights = default_weights(samples)
    target = labels_at_offsets(labels, samples)
    center = samples.sample(samples.center_index)
    margin = np.array([1.0 - np.sum((center - samples.sample(i)) * model.weights)
                       for i in range(samples.n_samples)])
    hinge = np.maximum(0.0, margin - target)
    reg = 0.5 * np.sum((model.regularizer.values[None] * model.weights) ** 2)
    return reg + 0.5 * lam * weights.alpha * np.sum(hinge)


@dataclass(frozen=True)
class HingeSolveInfo:
    objective: float
    iterations: int
    converged: bool


def solve_struck_hinge_small(samples: SampleSet, labels: LabelMap, lam,
                             weights: SampleWeights | None = None, big=INDICATOR_BIG,
                             max_iters=4000, tol=1e-8, return_info=False):
    """Subgradient descent on the one-sided hinge objective, small scale only.

    Runs a deterministic diminishing-step schedule from a zero start, keeps
    the best iterate seen, and stops early once the best objective stalls.
    If the budget runs out first the achieved objective is still reported in
    the info record.  Refuses sample sets larger than HINGE_SAMPLE_LIMIT.
    """
    if samples.n_samples > HINGE_SAMPLE_LIMIT:
        raise ValueError(f"hinge reference solver accepts at most {HINGE_SAMPLE_LIMIT} "
                         f"samples, got {samples.n_samples}")
    if weights is None:
        weights = default_weights(samples)
    alpha = weights.alpha
    rh, rw = samples.region_shape
    n_ch = samples.n_channels
    reg = box_regularizer((rh, rw), samples.box_shape, big)
    inv = 1.0 / reg.values
    target = labels_at_offsets(labels, samples)

    center = samples.sample(samples.center_index).astype(np.float64)
    diffs = (center[None] - samples.windows()) * inv[None, None]  # (N, L, rh, rw), scaled
    flat = diffs.reshape(samples.n_samples, -1)

    def objective(u):
        margin = 1.0 - flat @ u
        return 0.5 * np.sum(u ** 2) + 0.5 * lam * alpha * np.sum(
            np.maximum(0.0, margin - target))

    u = np.zeros(flat.shape[1])
    best_u, best_obj = u.copy(), objective(u)
    # step scale calibrated to the loss slope so the schedule is instance-robust
    slope = 0.5 * lam * alpha * np.linalg.norm(flat.sum(axis=0)) + 1.0
    step0 = 1.0 / slope
    stall, converged, it = 0, False, 0
    for it in range(1, max_iters + 1):
        margin = 1.0 - flat @ u
        active = margin - target > 0.0
        grad = u - 0.5 * lam * alpha * flat[active].sum(axis=0)
        u = u - step0 / np.sqrt(it) * grad
        obj = objective(u)
        if obj < best_obj - tol * max(1.0, abs(best_obj)):
            best_obj, best_u = obj, u.copy()
            stall = 0
        else:
            stall += 1
            if stall >= 200:
                converged = True
                break
    model = StruckModel(best_u.reshape(n_ch, rh, rw) * inv[None], reg,
                        tuple(samples.box_shape))
    if return_info:
        return model, HingeSolveInfo(float(best_obj), it, converged)
    return model


def solve_struck_square_cyclic(base, box_shape, labels: LabelMap, lam,
                               weights: SampleWeights | None = None,
                               big=INDICATOR_BIG, solver="auto"):
    """The margin objective of solve_struck_square on cyclic virtual samples.

    Training rows are x - shift_s(x) over every cyclic shift s of the
    region-size base x, with targets 1 - label(s); the rows whose shifted box
    stays inside the region equal the true-translation rows exactly, the
    wrapping ones are the virtual samples.  Same u = reg * w rescaling and
    dense/cg split as the true-sample solver.
    """
    base = np.asarray(base, dtype=np.float64)
    if base.ndim == 2:
        base = base[None]
    n_ch, rh, rw = base.shape
    if labels.values.shape != (rh, rw):
        raise ValueError(f"labels {labels.values.shape} must match base grid {(rh, rw)}")
    T = rh * rw
    if weights is None:
        weights = SampleWeights(impact=1.0, pair_count=T)
    alpha = weights.alpha
    reg = box_regularizer((rh, rw), box_shape, big)
    inv = 1.0 / reg.values
    # targets indexed by shift, peak label at the (0, 0) shift
    b = 1.0 - np.roll(labels.values, (-labels.center[0], -labels.center[1]),
                      axis=(0, 1)).ravel()
    n_unknowns = n_ch * T
    if solver == "auto":
        solver = "dense" if n_unknowns <= DENSE_UNKNOWN_LIMIT else "cg"

    if solver == "dense":
        from .srdcf import _shift_design
        blocks = []
        for x_l in base:
            rows = _shift_design(x_l)  # row s = shift_s(x) flattened
            blocks.append((x_l.ravel()[None, :] - rows) * inv.ravel()[None, :])
        diff = np.concatenate(blocks, axis=1)
        gram = lam * alpha * (diff.T @ diff)
        gram[np.diag_indices_from(gram)] += 1.0
        rhs = lam * alpha * (diff.T @ b)
        u = np.linalg.solve(gram, rhs).reshape(n_ch, rh, rw)
    elif solver == "cg":
        u = _solve_cyclic_cg(base, inv, b.reshape(rh, rw), lam, alpha)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return StruckModel(u * inv[None], reg, tuple(box_shape))


def _solve_cyclic_cg(base, inv, b_grid, lam, alpha):
    from .dsp import circ_correlate
    n_ch, rh, rw = base.shape

    def apply_diff(u):
        """row_s . u with row_s = (x - shift_s(x)) / reg per channel."""
        v = u.reshape(n_ch, rh, rw) * inv[None]
        out = np.full((rh, rw), float(np.sum(base * v)))
        for l in range(n_ch):
            # <shift_s(x_l), v_l> over all s is the circular correlation
            out -= circ_correlate(v[l], base[l])
        return out

    def apply_diff_t(s_grid):
        out = np.empty((n_ch, rh, rw))
        total = s_grid.sum()
        for l in range(n_ch):
            out[l] = total * base[l] - circ_correlate(s_grid, base[l])
        return (out * inv[None]).ravel()

    def matvec(u_flat):
        return u_flat + lam * alpha * apply_diff_t(apply_diff(u_flat))

    op = LinearOperator((n_ch * rh * rw,) * 2, matvec=matvec, dtype=np.float64)
    rhs = lam * alpha * apply_diff_t(b_grid)
    u, info = cg(op, rhs, rtol=CG_RTOL, maxiter=CG_MAXITER)
    if info > 0:
        raise RuntimeError(f"conjugate gradient did not reach rtol {CG_RTOL} "
                           f"within {CG_MAXITER} iterations")
    return u.reshape(n_ch, rh, rw)


def scores(model: StruckModel, samples: SampleSet):
    """Per-offset location score <w, P(y)> for every sample."""
    if samples.super_map.shape[0] != model.weights.shape[0]:
        raise ValueError("channel count mismatch between model and samples")
    return np.einsum("nlrc,lrc->n", samples.windows(), model.weights)


def locate(model: StruckModel, samples: SampleSet):
    """Best offset (dr, dc) and the full score vector over the sample set."""
    s = scores(model, samples)
    best = int(np.argmax(s))
    return tuple(int(v) for v in samples.offsets[best]), s


@dataclass(frozen=True)
class GapPoint:
    region_mult: float
    region_cells: int
    gap: float
    sample_ratio: float


def asymptotic_gap(super_texture, box_cells, region_mults=(2, 4, 8), lam=1.0,
                   sigma=None, big=INDICATOR_BIG, solver="auto"):
    """Gap between the dense-translation solve and the cyclic-shift solve.

    For each region size w_l = m * w the same margin objective is solved
    twice: on all true translations of the texture (stride 1) and on all
    cyclic shifts of the centered region crop, with the same box indicator,
    the same per-sample weight and the same regularization trade-off
    (margin-solver parametrization lam_margin * alpha = 1 / lam, i.e. unit
    weight per squared residual against ``lam`` on the squared regularizer
    norm).  The two problems share their non-wrapping rows exactly; the
    wrapping rows are the virtual samples, so the solutions approach each
    other as the per-axis true-to-cyclic sample ratio (w_l - w + 1) / w_l
    approaches one.  Reported per size: the relative L2 difference of the
    central object-box blocks and that ratio.

    ``sigma`` defaults to the shared label convention sqrt(w*h)/16.
    """
    super_texture = np.asarray(super_texture, dtype=np.float64)
    if super_texture.ndim == 2:
        super_texture = super_texture[None]
    w = int(box_cells)
    if sigma is None:
        sigma = w / 16.0
    points = []
    for m in region_mults:
        rl = int(round(m * w))
        need = 2 * rl - w
        sh, sw = super_texture.shape[1:]
        if sh < need or sw < need:
            raise ValueError(f"texture {sh} x {sw} too small for region mult {m} "
                             f"(needs {need})")
        r0, c0 = (sh - need) // 2, (sw - need) // 2
        sub = super_texture[:, r0:r0 + need, c0:c0 + need]
        samples = sample_set_from_map(sub, (rl, rl), (w, w), stride=1)
        labels = gaussian_labels((rl, rl), (0, 0), sigma)
        unit = SampleWeights(impact=samples.n_samples, pair_count=samples.n_samples)

        model = solve_struck_square(samples, labels, 1.0 / lam, weights=unit,
                                    big=big, solver=solver)
        base = samples.sample(samples.center_index)
        cyc_unit = SampleWeights(impact=rl * rl, pair_count=rl * rl)
        twin = solve_struck_square_cyclic(base, (w, w), labels, 1.0 / lam,
                                          weights=cyc_unit, big=big, solver=solver)
        a = model.central_block()
        bcentral = twin.central_block()
        gap = np.linalg.norm(a - bcentral) / max(np.linalg.norm(bcentral), 1e-300)
        ratio = (rl - w + 1) / rl
        points.append(GapPoint(float(m), rl, float(gap), float(ratio)))
    return points
