"""Single-frame spatially regularized correlation filter and its relatives.

The training problem over full-size per-channel filters w_l:

    min  0.5 * alpha * sum_s (y[s] - sum_l <w_l, shift_s(x_l)>)^2
         + 0.5 * lam * sum_l || reg * w_l ||^2

with shift_s ranging over every cyclic shift of the base patch and ``reg`` a
positive per-cell weight map.  Three regularizer families are provided: a
quadratic bowl centered on the target, and two big-outside-the-window
indicators (one matching a filter mask's active block, one matching the
object box) which force the filter's energy into the window.

Solves are always performed in the rescaled variable u = reg * w, which
keeps the normal equations well conditioned even for indicator weights of
1e8.  Small problems use dense normal equations; larger ones conjugate
gradient with FFT matvecs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .cflbmc import MaskSpec
from .dsp import circ_correlate
from .features import ChannelPatch
from .geometry import LabelMap, SampleWeights

# dense normal equations up to this many unknowns, conjugate gradient above
DENSE_UNKNOWN_LIMIT = 4096
CG_RTOL = 1e-6
CG_MAXITER = 500

QUAD_BASE = 0.1
QUAD_CURVATURE = 3.0
INDICATOR_BIG = 1e4


@dataclass(frozen=True)
class SpatialRegularizer:
    """Positive per-cell filter weight map."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 2:
            raise ValueError("regularizer values must be 2-D")
        if self.values.min() <= 0:
            raise ValueError("regularizer values must be strictly positive")


def quadratic_regularizer(grid_shape, box_shape, base=QUAD_BASE, curvature=QUAD_CURVATURE):
    """Bowl-shaped weights: base + curvature * ((dc / box_w)^2 + (dr / box_h)^2)
    with displacements measured from the grid center in cells."""
    h, w = grid_shape
    bh, bw = box_shape
    dr = (np.arange(h) - (h - 1) / 2.0)[:, None] / float(bh)
    dc = (np.arange(w) - (w - 1) / 2.0)[None, :] / float(bw)
    return SpatialRegularizer(base + curvature * (dr ** 2 + dc ** 2), "quadratic")


def _indicator(grid_shape, window_shape, big, kind):
    mask = MaskSpec(tuple(grid_shape), tuple(window_shape))
    vals = np.full(grid_shape, float(big))
    vals[mask.indicator() == 1.0] = 1.0
    return SpatialRegularizer(vals, kind)


def mask_regularizer(grid_shape, active_shape, big=INDICATOR_BIG):
    """1 on a centered active block, ``big`` outside: the indicator that makes
    this solver mimic a masked filter."""
    return _indicator(grid_shape, active_shape, big, "mask_indicator")


def box_regularizer(grid_shape, box_shape, big=INDICATOR_BIG):
    """1 inside the centered object box, ``big`` outside."""
    return _indicator(grid_shape, box_shape, big, "box_indicator")


@dataclass
class FilterBank:
    """Trained per-channel filters on the full grid."""

    weights: np.ndarray  # (L, h, w)
    regularizer: SpatialRegularizer | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim == 2:
            self.weights = self.weights[None]
        if self.weights.ndim != 3:
            raise ValueError("filter weights must be (L, h, w)")

    @property
    def grid_shape(self):
        return self.weights.shape[1:]


def _as_channels(bases):
    if isinstance(bases, ChannelPatch):
        bases = bases.channels
    bases = np.asarray(bases, dtype=np.float64)
    if bases.ndim == 2:
        bases = bases[None]
    return bases


def _shift_design(base):
    """T x T matrix whose row s is the cyclically shifted base, flattened."""
    h, w = base.shape
    rs, cs = np.unravel_index(np.arange(h * w), (h, w))
    rows = (rs[:, None] + rs[None, :]) % h
    cols = (cs[:, None] + cs[None, :]) % w
    return base[rows, cols]


def solve_srdcf(bases, labels, reg: SpatialRegularizer, lam,
                weights: SampleWeights | None = None, solver="auto"):
    """Train the spatially reweighted filter bank; returns a FilterBank.

    ``solver``: "dense" for explicit normal equations, "cg" for conjugate
    gradient on the same system with FFT matvecs, "auto" to pick by unknown
    count (dense up to 4096 unknowns).
    """
    bases = _as_channels(bases)
    y = labels.values if isinstance(labels, LabelMap) else np.asarray(labels, dtype=np.float64)
    n_ch, h, w = bases.shape
    if (h, w) != y.shape:
        raise ValueError(f"labels {y.shape} must match base grid {(h, w)}")
    if reg.values.shape != (h, w):
        raise ValueError(f"regularizer {reg.values.shape} must match base grid {(h, w)}")
    alpha = 1.0 if weights is None else weights.alpha
    n_unknowns = n_ch * h * w
    if solver == "auto":
        solver = "dense" if n_unknowns <= DENSE_UNKNOWN_LIMIT else "cg"

    if solver == "dense":
        u = _solve_dense(bases, y, reg.values, lam, alpha)
    elif solver == "cg":
        u = _solve_cg(bases, y, reg.values, lam, alpha)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return FilterBank(u / reg.values[None], reg)


def _solve_dense(bases, y, reg_values, lam, alpha):
    n_ch, h, w = bases.shape
    inv = (1.0 / reg_values).ravel()
    design = np.hstack([_shift_design(x) * inv[None, :] for x in bases])
    gram = alpha * (design.T @ design)
    gram[np.diag_indices_from(gram)] += lam
    rhs = alpha * (design.T @ y.ravel())
    u = np.linalg.solve(gram, rhs)
    return u.reshape(n_ch, h, w)


def _solve_cg(bases, y, reg_values, lam, alpha):
    n_ch, h, w = bases.shape
    t = h * w
    inv = 1.0 / reg_values

    def matvec(u_flat):
        u = u_flat.reshape(n_ch, h, w)
        resp = np.zeros((h, w))
        for l in range(n_ch):
            resp += circ_correlate(u[l] * inv, bases[l])
        out = np.empty_like(u)
        for l in range(n_ch):
            out[l] = alpha * inv * circ_correlate(resp, bases[l]) + lam * u[l]
        return out.ravel()

    rhs = np.empty((n_ch, h, w))
    for l in range(n_ch):
        rhs[l] = alpha * inv * circ_correlate(y, bases[l])
    op = LinearOperator((n_ch * t, n_ch * t), matvec=matvec, dtype=np.float64)
    u, info = cg(op, rhs.ravel(), rtol=CG_RTOL, maxiter=CG_MAXITER)
    if info > 0:
        raise RuntimeError(f"conjugate gradient did not reach rtol {CG_RTOL} "
                           f"within {CG_MAXITER} iterations")
    return u.reshape(n_ch, h, w)


@dataclass(frozen=True)
class MaskedRelationResult:
    """Outcome of comparing the indicator-regularized solve with the exact
    masked ridge on one instance."""

    relation_error: float   # ||central block difference|| / ||masked solution||
    annulus_energy: float   # ||solution outside the block|| / ||solution||
    big: float
    lam: float


def solve_masked_ridge_dense(bases, labels, mask: MaskSpec, lam, alpha=1.0):
    """Exact minimizer of the masked ridge problem by dense normal equations.

    Same objective as the ALM solver; used as its closed-form counterpart in
    relation checks.  Returns (L, dh, dw).
    """
    bases = _as_channels(bases)
    y = labels.values if isinstance(labels, LabelMap) else np.asarray(labels, dtype=np.float64)
    n_ch = bases.shape[0]
    dh, dw = mask.active_shape
    d = dh * dw
    keep = mask.indicator().ravel() == 1.0
    design = np.hstack([_shift_design(x)[:, keep] for x in bases])
    gram = alpha * (design.T @ design)
    gram[np.diag_indices_from(gram)] += lam
    rhs = alpha * (design.T @ y.ravel())
    sol = np.linalg.solve(gram, rhs)
    return sol.reshape(n_ch, dh, dw)


def masked_relation_check(bases, labels, mask: MaskSpec, big, lam,
                          weights: SampleWeights | None = None):
    """How closely the indicator-regularized solve reproduces the masked ridge.

    Solves both problems exactly (dense routes) and reports the relative
    central-block disagreement plus the relative energy the indicator solve
    leaves outside the block.  Both quantities fall toward zero as ``big``
    grows.
    """
    bases = _as_channels(bases)
    alpha = 1.0 if weights is None else weights.alpha
    reg = mask_regularizer(mask.grid_shape, mask.active_shape, big)
    bank = solve_srdcf(bases, labels, reg, lam, weights=weights, solver="dense")
    ridge = solve_masked_ridge_dense(bases, labels, mask, lam, alpha)
    central = mask.crop(bank.weights)
    scale = max(np.linalg.norm(ridge), 1e-300)  # zero signal -> zero error
    relation_error = np.linalg.norm(central - ridge) / scale
    inside = mask.indicator() == 1.0
    annulus = bank.weights[:, ~inside]
    annulus_energy = np.linalg.norm(annulus) / max(np.linalg.norm(bank.weights), 1e-300)
    return MaskedRelationResult(float(relation_error), float(annulus_energy),
                                float(big), float(lam))


def response_map(bank: FilterBank, patch):
    """Per-shift response: sum over channels of the cyclic correlation of each
    filter with the corresponding patch channel."""
    channels = _as_channels(patch)
    if channels.shape != bank.weights.shape:
        raise ValueError(f"patch {channels.shape} does not match filters {bank.weights.shape}")
    resp = np.zeros(bank.grid_shape)
    for w_l, x_l in zip(bank.weights, channels):
        resp += circ_correlate(w_l, x_l)
    return resp


def subcell_refine(response, peak=None):
    """Continuous sub-cell peak offset from a response grid.

    Fits an independent parabola per axis through the peak and its two cyclic
    neighbors; degenerate (non-concave) curvature falls back to the integer
    peak.  Returns (dr, dc), each in (-1, 1).
    """
    response = np.asarray(response)
    h, w = response.shape
    if peak is None:
        peak = np.unravel_index(int(np.argmax(response)), response.shape)
    r, c = peak

    def axis_offset(fm, f0, fp):
        denom = fm - 2.0 * f0 + fp
        if denom >= -1e-300:
            return 0.0
        off = 0.5 * (fm - fp) / denom
        return float(np.clip(off, -0.999, 0.999))

    dr = axis_offset(response[(r - 1) % h, c], response[r, c], response[(r + 1) % h, c])
    dc = axis_offset(response[r, (c - 1) % w], response[r, c], response[r, (c + 1) % w])
    return dr, dc
