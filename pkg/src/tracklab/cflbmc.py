"""Masked multi-channel correlation filter trained by an augmented-Lagrangian
(ALM) iteration in the Fourier domain.

The problem: per-channel filters live on a small centered block (the mask) of
the full training grid, so the training samples are all cyclic shifts of the
base patch but the filter never wraps content from outside its block:

    min over masked filters w_l of
        0.5 * || y - sum_l corr(embed(w_l), x_l) ||^2  +  0.5 * lam * sum_l ||w_l||^2

where corr is cyclic correlation and embed zero-pads the block into the full
grid.  The ALM splits the full-size filter spectrum off as an auxiliary
variable per channel; each outer iteration updates the auxiliary spectra one
channel at a time (Gauss-Seidel), re-solves the masked filters in closed
form, steps the multipliers and grows the penalty.

All spectra are unitary-DFT; the penalty parameter ``mu`` is scaled by the
grid size T inside the Lagrangian (see docs/fourier_normalization.md), which
keeps the conventional small defaults (mu0 = 0.01, beta = 1.1) effective at
any grid size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import dft2, idft2, circ_correlate
from .geometry import LabelMap


@dataclass(frozen=True)
class MaskSpec:
    """Centered active block of ``active_shape`` cells inside ``grid_shape``."""

    grid_shape: tuple[int, int]
    active_shape: tuple[int, int]

    def __post_init__(self):
        (th, tw), (dh, dw) = self.grid_shape, self.active_shape
        if dh < 1 or dw < 1:
            raise ValueError("active block must be at least 1 x 1")
        if dh > th or dw > tw:
            raise ValueError(f"active block {self.active_shape} exceeds grid {self.grid_shape}")
        if (th - dh) % 2 or (tw - dw) % 2:
            raise ValueError("grid minus active extents must be even so the block is centered")

    @property
    def corner(self):
        return ((self.grid_shape[0] - self.active_shape[0]) // 2,
                (self.grid_shape[1] - self.active_shape[1]) // 2)

    @property
    def grid_size(self):
        return self.grid_shape[0] * self.grid_shape[1]

    def embed(self, small):
        """Zero-pad an active-block array (leading dims pass through)."""
        small = np.asarray(small)
        r0, c0 = self.corner
        dh, dw = self.active_shape
        out = np.zeros(small.shape[:-2] + self.grid_shape, dtype=small.dtype)
        out[..., r0:r0 + dh, c0:c0 + dw] = small
        return out

    def crop(self, full):
        """Extract the active block (leading dims pass through)."""
        full = np.asarray(full)
        r0, c0 = self.corner
        dh, dw = self.active_shape
        return full[..., r0:r0 + dh, c0:c0 + dw].copy()

    def indicator(self):
        """Full-grid 0/1 map of the active block."""
        return self.embed(np.ones(self.active_shape))


@dataclass(frozen=True)
class AlmConfig:
    mu0: float = 0.01
    beta: float = 1.1
    mu_max: float = 20.0
    lam: float = 10.0
    iterations: int = 6

    def __post_init__(self):
        if self.mu0 <= 0 or self.beta < 1 or self.mu_max < self.mu0:
            raise ValueError("need mu0 > 0, beta >= 1, mu_max >= mu0")
        if self.lam < 0 or self.iterations < 1:
            raise ValueError("need lam >= 0 and at least one iteration")


@dataclass
class AlmState:
    """Iterate state: auxiliary full spectra, masked filters, multipliers, penalties."""

    full_spectra: np.ndarray   # (L, th, tw) complex, unitary spectra of the aux filters
    masked: np.ndarray         # (L, dh, dw) real, the masked filters
    multipliers: np.ndarray    # (L, th, tw) complex
    penalty: np.ndarray        # (L,) current mu per channel
    iteration: int = 0


def init_state(n_channels, mask: MaskSpec, config: AlmConfig) -> AlmState:
    th, tw = mask.grid_shape
    return AlmState(
        full_spectra=np.zeros((n_channels, th, tw), dtype=complex),
        masked=np.zeros((n_channels,) + mask.active_shape),
        multipliers=np.zeros((n_channels, th, tw), dtype=complex),
        penalty=np.full(n_channels, config.mu0),
    )


def _masked_spectra(state, mask):
    return dft2_stack(mask.embed(state.masked))


def dft2_stack(grids):
    return np.fft.fft2(grids, axes=(-2, -1), norm="ortho")


def idft2_stack(spectra):
    return np.fft.ifft2(spectra, axes=(-2, -1), norm="ortho")


def update_full_spectrum(state: AlmState, channel, base_spectra, label_spectrum,
                         mask: MaskSpec, config: AlmConfig):
    """Closed-form update of one channel's auxiliary spectrum (Gauss-Seidel step).

    Minimizes the Lagrangian over that spectrum with every other variable
    held at its current value; per frequency,

      g_l = (sqrt(T) x_l conj(y) + mu T w_l - zeta_l - T sum_{j!=l} x_l conj(x_j) g_j)
            / (T |x_l|^2 + mu T)
    """
    t = mask.grid_size
    mu_t = state.penalty[channel] * t
    x_l = base_spectra[channel]
    w_hat = dft2(mask.embed(state.masked[channel]))
    cross = np.zeros_like(x_l)
    for j in range(base_spectra.shape[0]):
        if j != channel:
            cross += np.conj(base_spectra[j]) * state.full_spectra[j]
    num = (np.sqrt(t) * x_l * np.conj(label_spectrum)
           + mu_t * w_hat
           - state.multipliers[channel]
           - t * x_l * cross)
    den = t * np.abs(x_l) ** 2 + mu_t
    state.full_spectra[channel] = num / den


def update_masked_filter(state: AlmState, channel, mask: MaskSpec, config: AlmConfig):
    """Closed-form update of one channel's masked filter.

    Minimizes the Lagrangian over the masked filter:
      w_l = crop(real(idft2(zeta_l + mu T g_l))) / (mu T + lam)
    """
    mu_t = state.penalty[channel] * mask.grid_size
    spatial = idft2(state.multipliers[channel] + mu_t * state.full_spectra[channel],
                    require_real=False).real
    state.masked[channel] = mask.crop(spatial) / (mu_t + config.lam)


def update_multipliers(state: AlmState, mask: MaskSpec):
    """zeta_l += mu T (g_l - w_l) for every channel."""
    mu_t = state.penalty[:, None, None] * mask.grid_size
    state.multipliers += mu_t * (state.full_spectra - _masked_spectra(state, mask))


def update_penalty(state: AlmState, config: AlmConfig):
    """mu <- min(mu_max, beta * mu), per channel."""
    state.penalty = np.minimum(config.mu_max, config.beta * state.penalty)


def alm_lagrangian(state: AlmState, base_spectra, label_spectrum, mask: MaskSpec,
                   config: AlmConfig):
    """Scalar augmented Lagrangian at the current state (for derivative checks)."""
    t = mask.grid_size
    resp = np.sqrt(t) * np.sum(base_spectra * np.conj(state.full_spectra), axis=0)
    fit = 0.5 * np.sum(np.abs(label_spectrum - resp) ** 2)
    reg = 0.5 * config.lam * np.sum(state.masked ** 2)
    w_hat = _masked_spectra(state, mask)
    gap = state.full_spectra - w_hat
    lagr = np.sum(np.real(np.conj(state.multipliers) * gap))
    penalty = 0.5 * np.sum(state.penalty[:, None, None] * t * np.abs(gap) ** 2)
    return fit + reg + lagr + penalty


def masked_objective(filters, bases, labels, lam):
    """The training objective at a masked filter bank.

    ``filters`` is (L, dh, dw) already embedded or to-embed?  Pass the
    full-size embedded filters; bases is (L, th, tw); labels a LabelMap or
    full grid.
    """
    y = labels.values if isinstance(labels, LabelMap) else np.asarray(labels)
    resp = np.zeros_like(y, dtype=float)
    for w_l, x_l in zip(filters, bases):
        resp += circ_correlate(w_l, x_l)
    return 0.5 * np.sum((y - resp) ** 2) + 0.5 * lam * np.sum(np.asarray(filters) ** 2)


def solve_cflbmc(bases, labels, mask: MaskSpec, config: AlmConfig = AlmConfig(),
                 return_state=False):
    """Run the ALM iteration; returns the (L, dh, dw) masked filter bank.

    ``bases``: (L, th, tw) base patch channels; ``labels``: LabelMap or grid.
    One outer iteration = Gauss-Seidel pass over the auxiliary spectra,
    masked-filter re-solve, multiplier step, penalty growth.
    """
    bases = np.asarray(bases, dtype=float)
    if bases.ndim == 2:
        bases = bases[None]
    y = labels.values if isinstance(labels, LabelMap) else np.asarray(labels, dtype=float)
    if bases.shape[1:] != tuple(mask.grid_shape) or y.shape != tuple(mask.grid_shape):
        raise ValueError(f"bases {bases.shape[1:]} / labels {y.shape} must match "
                         f"grid {mask.grid_shape}")
    n_ch = bases.shape[0]
    base_spectra = dft2_stack(bases)
    label_spectrum = dft2(y)

    state = init_state(n_ch, mask, config)
    for _ in range(config.iterations):
        for l in range(n_ch):
            update_full_spectrum(state, l, base_spectra, label_spectrum, mask, config)
        for l in range(n_ch):
            update_masked_filter(state, l, mask, config)
        update_multipliers(state, mask)
        update_penalty(state, config)
        state.iteration += 1
    if return_state:
        return state.masked, state
    return state.masked
