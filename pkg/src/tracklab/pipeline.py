"""Frame-to-frame tracking loop shared by the three tracker kinds.

Geometry is anchored at the first frame: the object's cell dims and the
model grids are fixed from the initial box, and later frames are cropped at
the current scale then resampled to that native geometry, so the model
always sees the object at its training size.  Localization searches a region
centered on the previous estimate; correlation kinds refine the response
peak to sub-cell accuracy, the dense-sample kind moves in whole cells.
Scale is re-estimated after localization from a small geometric candidate
ladder, and the model is refreshed with an exponential template update
(correlation kinds) or a sliding-window retrain (dense kind).  Nothing here
draws random numbers, so identical inputs give bit-identical trajectories.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .cflbmc import AlmConfig, MaskSpec, solve_cflbmc
from .dsp import hann2
from .features import apply_window, extract_patch, featurize, resample
from .geometry import BBox, LabelMap, gaussian_labels
from .srdcf import FilterBank, quadratic_regularizer, response_map, solve_srdcf, subcell_refine
from .struck import (
    StruckModel,
    region_cell_dims,
    sample_set_from_map,
    scores,
    solve_struck_square_multi,
)

KINDS = ("srdcf", "cflbmc", "struck_linear")
DEFAULT_LAMBDA = {"srdcf": 10.0, "cflbmc": 10.0, "struck_linear": 10.0}
CONFIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    """Tracker settings; every field has a stock default so {} is a config."""

    kind: str = "srdcf"
    cell_size: int = 4
    search_area_factor: float = 16.0    # correlation kinds: region area / box area
    struck_region_scale: float = 2.5    # dense kind: region extent per axis
    update_rate: float = 0.025
    scale_count: int = 7
    scale_step: float = 1.02
    sigma_factor: float = 1.0 / 16.0
    lam: float | None = None            # per-kind default when None
    feature_kind: str = "hog9"
    struck_memory: int = 10
    struck_train_stride: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown tracker kind {self.kind!r}; choose from {KINDS}")
        if self.cell_size < 1:
            raise ValueError("cell_size must be >= 1")
        if self.search_area_factor < 1.0 or self.struck_region_scale <= 1.0:
            raise ValueError("search regions must be larger than the box")
        if not 0.0 <= self.update_rate <= 1.0:
            raise ValueError("update_rate must lie in [0, 1]")
        if self.scale_count < 1 or self.scale_count % 2 == 0:
            raise ValueError("scale_count must be odd so 1.0 is a candidate")
        if self.scale_step <= 1.0:
            raise ValueError("scale_step must exceed 1")
        if self.sigma_factor <= 0.0:
            raise ValueError("sigma_factor must be positive")
        if self.lam is not None and self.lam <= 0.0:
            raise ValueError("lam must be positive")
        if self.struck_memory < 1 or self.struck_train_stride < 1:
            raise ValueError("struck memory and train stride must be >= 1")

    @property
    def lam_value(self):
        return DEFAULT_LAMBDA[self.kind] if self.lam is None else self.lam

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    def config_hash(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]


@dataclass
class TrackerState:
    """Everything one sequence loop mutates: pose, model and its training data."""

    config: PipelineConfig
    center: tuple[float, float]        # (cx, cy) px
    native_size: tuple[float, float]   # (w, h) px at scale 1
    scale: float
    frame_index: int
    box_cells: tuple[int, int]         # (bh, bw)
    grid_cells: tuple[int, int]        # model grid (correlation) / region (dense)
    labels: LabelMap
    model: object = None               # FilterBank or StruckModel
    template: np.ndarray | None = None  # correlation kinds: running windowed features
    window: np.ndarray | None = None
    memory: list = field(default_factory=list)  # dense kind: recent sample sets

    def __post_init__(self):
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")

    @property
    def box(self):
        w = self.native_size[0] * self.scale
        h = self.native_size[1] * self.scale
        cx, cy = self.center
        return BBox(cx - w / 2.0, cy - h / 2.0, w, h)


def _box_cells(box: BBox, cell):
    return (max(1, round(box.height / cell)), max(1, round(box.width / cell)))


def _cf_grid(cfg: PipelineConfig, box: BBox):
    """Square-ish search grid in cells with box-parity margins on both axes."""
    bh, bw = _box_cells(box, cfg.cell_size)
    side = np.sqrt(cfg.search_area_factor * box.width * box.height)
    g = max(int(round(side / cfg.cell_size)), max(bh, bw) + 2)
    gh = g + (g - bh) % 2
    gw = g + (g - bw) % 2
    return (bh, bw), (gh, gw)


def _crop_geometry(center, scale, cells, cfg: PipelineConfig):
    """Integer crop placement shared by every candidate scale.

    The crop is even-sized and centered on the rounded center, so all scale
    candidates see identically aligned content; the sub-pixel part of the
    center is carried by the state and re-measured from the response peak.
    Returns (crop center, per-axis effective scale, crop size px).
    """
    native_h = cells[0] * cfg.cell_size
    native_w = cells[1] * cfg.cell_size
    size_h = max(2, 2 * round(native_h * scale / 2.0))
    size_w = max(2, 2 * round(native_w * scale / 2.0))
    crop_center = (float(round(center[0])), float(round(center[1])))
    return crop_center, (size_h / native_h, size_w / native_w), (size_h, size_w)


def _crop_native(frame, center, scale, cells, cfg: PipelineConfig):
    """Pixel block for _crop_geometry's crop, resampled to native dims."""
    native_h = cells[0] * cfg.cell_size
    native_w = cells[1] * cfg.cell_size
    (icx, icy), _, (size_h, size_w) = _crop_geometry(center, scale, cells, cfg)
    block = extract_patch(frame, BBox(icx - size_w // 2, icy - size_h // 2,
                                      size_w, size_h))
    if block.shape != (native_h, native_w):
        block = resample(block, native_h, native_w)
    return block


def _features_at(frame, center, scale, grid_cells, cfg: PipelineConfig):
    """(L, gh, gw) feature cells of the scaled crop, resampled to native px."""
    block = _crop_native(frame, center, scale, grid_cells, cfg)
    return featurize(block, cfg.feature_kind, cell_size=cfg.cell_size).channels


def _cf_labels(cfg, box_cells, grid_cells):
    sigma = cfg.sigma_factor * np.sqrt(box_cells[0] * box_cells[1])
    return gaussian_labels(grid_cells, (0, 0), sigma)


def _fit_cf(cfg: PipelineConfig, template, labels, box_cells):
    grid = template.shape[1:]
    if cfg.kind == "srdcf":
        reg = quadratic_regularizer(grid, box_cells)
        return solve_srdcf(template, labels, reg, cfg.lam_value)
    mask = MaskSpec(tuple(grid), tuple(box_cells))
    alm = AlmConfig(lam=cfg.lam_value)
    masked = solve_cflbmc(template, labels, mask, alm)
    return FilterBank(mask.embed(masked))


def _struck_super_cells(box_cells, grid_cells):
    bh, bw = box_cells
    rh, rw = grid_cells
    return (2 * rh - bh, 2 * rw - bw)


def _struck_sample_set(state: TrackerState, frame, center, scale, stride):
    """SampleSet around ``center`` at ``scale``, resampled to native cells."""
    cfg = state.config
    super_cells = _struck_super_cells(state.box_cells, state.grid_cells)
    block = _crop_native(frame, center, scale, super_cells, cfg)
    channels = featurize(block, cfg.feature_kind, cell_size=cfg.cell_size).channels
    return sample_set_from_map(channels, state.grid_cells, state.box_cells, stride)


def _retrain_struck(state: TrackerState):
    state.model = solve_struck_square_multi(state.memory, state.labels,
                                            state.config.lam_value)


def init(frame, box: BBox, cfg: PipelineConfig) -> TrackerState:
    """Train the chosen tracker kind on the first frame."""
    center = box.center
    native_size = (float(box.width), float(box.height))
    if cfg.kind in ("srdcf", "cflbmc"):
        box_cells, grid_cells = _cf_grid(cfg, box)
        state = TrackerState(cfg, center, native_size, 1.0, 0, box_cells, grid_cells,
                             _cf_labels(cfg, box_cells, grid_cells))
        state.window = hann2(*grid_cells)
        state.template = _features_at(frame, center, 1.0, grid_cells, cfg) \
            * state.window[None]
        state.model = _fit_cf(cfg, state.template, state.labels, box_cells)
        return state
    box_cells, grid_cells = region_cell_dims(box, cfg.struck_region_scale,
                                             cfg.cell_size)
    state = TrackerState(cfg, center, native_size, 1.0, 0, box_cells, grid_cells,
                         _cf_labels(cfg, box_cells, grid_cells))
    state.memory = [_struck_sample_set(state, frame, center, 1.0,
                                       cfg.struck_train_stride)]
    _retrain_struck(state)
    return state


def _signed_peak(response):
    h, w = response.shape
    r, c = np.unravel_index(int(np.argmax(response)), response.shape)
    sr = (r + h // 2) % h - h // 2
    sc = (c + w // 2) % w - w // 2
    return (r, c), (sr, sc)


def _locate_shift(state: TrackerState, frame):
    """Displacement from the search-crop center, in native cells.

    Correlation kinds refine the response peak below cell width; the dense
    kind reports whole cells.  Returns (crop center px, (dr, dc) cells,
    per-axis effective scale of the crop).
    """
    cfg = state.config
    if cfg.kind in ("srdcf", "cflbmc"):
        crop_center, eff, _ = _crop_geometry(state.center, state.scale,
                                             state.grid_cells, cfg)
        z = _features_at(frame, state.center, state.scale, state.grid_cells, cfg)
        response = response_map(state.model, z * state.window[None])
        (r, c), (sr, sc) = _signed_peak(response)
        dr, dc = subcell_refine(response, (r, c))
        return crop_center, (sr + dr, sc + dc), eff
    super_cells = _struck_super_cells(state.box_cells, state.grid_cells)
    crop_center, eff, _ = _crop_geometry(state.center, state.scale, super_cells, cfg)
    samples = _struck_sample_set(state, frame, state.center, state.scale, stride=1)
    s = scores(state.model, samples)
    best = samples.offsets[int(np.argmax(s))]
    return crop_center, (float(best[0]), float(best[1])), eff


def _model_response(state: TrackerState, frame, scale):
    """Best response the model can reach on the crop at ``scale``.

    The peak over shifts rather than the zero-shift value, so sub-cell
    localization error does not leak into the scale comparison.
    """
    cfg = state.config
    if cfg.kind in ("srdcf", "cflbmc"):
        z = _features_at(frame, state.center, scale, state.grid_cells, cfg)
        return float(response_map(state.model, z * state.window[None]).max())
    samples = _struck_sample_set(state, frame, state.center, scale, stride=1)
    return float(scores(state.model, samples).max())


def estimate_scale(state: TrackerState, frame):
    """Best absolute scale from the candidate ladder about the current scale.

    Candidates are scale_step**k for k in -(n//2)..n//2; ties resolve to the
    factor closest to 1 (k = 0 first, then smaller |k|, zoom-out before
    zoom-in).
    """
    cfg = state.config
    half = cfg.scale_count // 2
    best_scale, best_value = state.scale, -np.inf
    for k in sorted(range(-half, half + 1), key=lambda k: (abs(k), k)):
        candidate = state.scale * cfg.scale_step ** k
        value = _model_response(state, frame, candidate)
        if value > best_value:
            best_scale, best_value = candidate, value
    return best_scale


def step(state: TrackerState, frame):
    """Advance one frame: locate, re-scale, refresh the model.

    Returns (state, box); the state is updated in place.  update_rate 0
    freezes the model for every kind (the dense kind otherwise retrains on a
    sliding window of recent frames and ignores the rate's value).
    """
    cfg = state.config
    (ccx, ccy), (dr, dc), (eff_h, eff_w) = _locate_shift(state, frame)
    state.center = (ccx + dc * cfg.cell_size * eff_w,
                    ccy + dr * cfg.cell_size * eff_h)
    if cfg.scale_count > 1:
        state.scale = estimate_scale(state, frame)

    if cfg.update_rate > 0.0:
        if cfg.kind in ("srdcf", "cflbmc"):
            fresh = _features_at(frame, state.center, state.scale,
                                 state.grid_cells, cfg) * state.window[None]
            state.template = (1.0 - cfg.update_rate) * state.template \
                + cfg.update_rate * fresh
            state.model = _fit_cf(cfg, state.template, state.labels, state.box_cells)
        else:
            state.memory.append(_struck_sample_set(state, frame, state.center,
                                                   state.scale,
                                                   cfg.struck_train_stride))
            del state.memory[:-cfg.struck_memory]
            _retrain_struck(state)
    state.frame_index += 1
    return state, state.box


def track_sequence(frames, init_box: BBox, cfg: PipelineConfig):
    """Run the loop over an iterable of frames; returns one BBox per frame."""
    frames = iter(frames)
    try:
        first = next(frames)
    except StopIteration:
        raise ValueError("need at least one frame") from None
    state = init(first, init_box, cfg)
    boxes = [state.box]
    for frame in frames:
        _, box = step(state, frame)
        boxes.append(box)
    return boxes
