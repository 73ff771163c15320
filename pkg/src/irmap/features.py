"""Per-layer IR feature extractors over an ordered, corrected frame stack.

Every extractor returns a FeatureMap aligned to the corrected pixel grid.
A single laser-activity count threshold (counts of a 660 degC blackbody at
unit emissivity) defines "scanned" everywhere: the interpass cutoff, the
unscanned sentinel, and the scalar-assignment target pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import imageops
from .errors import NoPrescanError, ParameterError
from .geometry import LayerMask
from .imageops import LabelGrid, ReductionState, fold_max_argmax
from .radiometry import CalibrationProfile, SurfaceClass, forward_counts, invert_counts_array

UNSCANNED = -1


class FeatureId(IntEnum):
    INTERPASS = 1
    HEAT_INTENSITY = 2
    SCAN_ORDER = 3
    LOCAL_PREDEPOSITION = 4
    MAX_PREDEPOSITION = 5
    SPATTER_GENERATION = 6
    SPATTER_LANDING = 7
    MELT_POOL_AREA = 8
    COOLING_RATE = 9
    INTERPASS_LAPLACIAN = 10
    ASPRINTED_LAPLACIAN = 11


FEATURE_UNITS = {
    FeatureId.INTERPASS: "degC",
    FeatureId.HEAT_INTENSITY: "counts",
    FeatureId.SCAN_ORDER: "frame",
    FeatureId.LOCAL_PREDEPOSITION: "degC",
    FeatureId.MAX_PREDEPOSITION: "degC",
    FeatureId.SPATTER_GENERATION: "count",
    FeatureId.SPATTER_LANDING: "count",
    FeatureId.MELT_POOL_AREA: "px",
    FeatureId.COOLING_RATE: "degC/s",
    FeatureId.INTERPASS_LAPLACIAN: "degC/px^2",
    FeatureId.ASPRINTED_LAPLACIAN: "degC/px^2",
}


@dataclass
class LayerStack:
    """Ordered perspective-corrected radiometric frames for one layer."""

    frames: np.ndarray  # (n, h, w) counts, float64
    fps: float = 30.0
    layer: int = 0
    recoat_boundary: int = 0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ParameterError(
                f"stack needs >= 1 uniform frame, got shape {self.frames.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1:]

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class FeatureMap:
    feature_id: FeatureId
    layer: int
    grid: np.ndarray
    validity: np.ndarray
    units: str = ""
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.units:
            self.units = FEATURE_UNITS[self.feature_id]


@dataclass
class SpatterRecord:
    frame: int
    landing_pixels: np.ndarray  # (n, 2) array of (y, x)
    centroid: tuple[float, float]  # (x, y)
    size: int
    source_pixels: np.ndarray  # (n, 2) array of (y, x), laser location at the frame


@dataclass
class FeatureParams:
    """Tunable extractor parameters; thresholds default from the profile."""

    offset_frames: int = 10
    cooling_window: int = 30
    mask_sigma: float = 3.0
    blob_sigma: float = 1.0
    dilation_radius: int = 2
    interpass_frame_cap: int = 3
    activity_threshold: float | None = None  # counts; None = derive from profile
    melt_threshold: float | None = None  # counts; None = derive from profile
    melt_emissivity: float = 0.1
    spatter_floor_sigmas: float = 6.0

    def activity(self, profile: CalibrationProfile) -> float:
        if self.activity_threshold is not None:
            return self.activity_threshold
        # melt-onset temperature seen through the low as-printed emissivity:
        # far above any unscanned pixel, below every laser peak
        return forward_counts(660.0, profile.emissivity_printed, profile)

    def melt(self, profile: CalibrationProfile) -> float:
        if self.melt_threshold is not None:
            return self.melt_threshold
        return forward_counts(660.0, self.melt_emissivity, profile)


def _to_temperature(frame, eps: float, profile: CalibrationProfile):
    """Counts to degC at a fixed emissivity; below-floor pixels pinned to the
    reflected temperature so downstream filters stay finite."""
    values, valid = invert_counts_array(frame, eps, profile)
    values = np.where(valid, values, profile.reflected_temperature_c)
    return values, valid


def interpass(
    stack: LayerStack, profile: CalibrationProfile, params: FeatureParams | None = None
) -> FeatureMap:
    """Mean powder-emissivity temperature of the pre-scan frames."""
    params = params or FeatureParams()
    thr = params.activity(profile)
    k = len(stack)
    for t in range(len(stack)):
        if (stack.frames[t] > thr).any():
            k = t
            break
    if k == 0:
        raise NoPrescanError("laser already active in frame 0")
    k = min(k, params.interpass_frame_cap)
    acc = np.zeros(stack.shape)
    valid = np.ones(stack.shape, dtype=bool)
    for t in range(k):
        values, ok = _to_temperature(stack.frames[t], profile.emissivity_powder, profile)
        acc += values
        valid &= ok
    return FeatureMap(
        feature_id=FeatureId.INTERPASS,
        layer=stack.layer,
        grid=acc / k,
        validity=valid,
    )


def heat_intensity_and_scan_order(
    stack: LayerStack, profile: CalibrationProfile, params: FeatureParams | None = None
) -> tuple[FeatureMap, FeatureMap]:
    """Raw-count running maximum (emissivity treated as 1.0) and its frame index."""
    params = params or FeatureParams()
    thr = params.activity(profile)
    state = ReductionState.empty(stack.shape)
    for t in range(len(stack)):
        fold_max_argmax(state, stack.frames[t], t)
    scanned = state.max_value > thr
    intensity = FeatureMap(
        feature_id=FeatureId.HEAT_INTENSITY,
        layer=stack.layer,
        grid=np.where(scanned, state.max_value, np.nan),
        validity=scanned.copy(),
    )
    order = FeatureMap(
        feature_id=FeatureId.SCAN_ORDER,
        layer=stack.layer,
        grid=np.where(scanned, state.argmax_frame, UNSCANNED).astype(np.float64),
        validity=scanned.copy(),
    )
    return intensity, order


def _scan_frames(scan_order: FeatureMap) -> np.ndarray:
    return np.where(scan_order.validity, scan_order.grid, UNSCANNED).astype(np.int64)


def _bbox_slices(selected: np.ndarray) -> tuple[slice, slice]:
    """Bounding-box slices of the True pixels (whole frame when empty)."""
    ys, xs = np.nonzero(selected)
    if len(xs) == 0:
        return slice(0, selected.shape[0]), slice(0, selected.shape[1])
    return (
        slice(int(ys.min()), int(ys.max()) + 1),
        slice(int(xs.min()), int(xs.max()) + 1),
    )


def local_predeposition(
    stack: LayerStack,
    scan_order: FeatureMap,
    profile: CalibrationProfile,
    offset: int = 10,
) -> FeatureMap:
    """Powder-emissivity temperature `offset` frames before each pixel's scan."""
    s = _scan_frames(scan_order)
    valid = s >= 0
    target = np.maximum(s - offset, 0)
    clamped = valid & (s < offset)
    grid = np.full(stack.shape, np.nan)
    roi = _bbox_slices(valid)
    v_roi, t_roi, g_roi = valid[roi], target[roi], grid[roi]
    for t in np.unique(t_roi[v_roi]):
        values, _ = _to_temperature(
            stack.frames[t][roi], profile.emissivity_powder, profile
        )
        sel = v_roi & (t_roi == t)
        g_roi[sel] = values[sel]
    return FeatureMap(
        feature_id=FeatureId.LOCAL_PREDEPOSITION,
        layer=stack.layer,
        grid=grid,
        validity=valid,
        flags={"clamped": clamped},
    )


def max_predeposition(
    stack: LayerStack,
    scan_order: FeatureMap,
    profile: CalibrationProfile,
    offset: int = 10,
) -> FeatureMap:
    """Maximum powder-emissivity temperature over frames [0, scan - offset]."""
    s = _scan_frames(scan_order)
    valid = s >= 0
    target = np.maximum(s - offset, 0)
    clamped = valid & (s < offset)
    grid = np.full(stack.shape, np.nan)
    roi = _bbox_slices(valid)
    v_roi, t_roi, g_roi = valid[roi], target[roi], grid[roi]
    running = np.full(v_roi.shape, -np.inf)
    last = int(t_roi[v_roi].max()) if v_roi.any() else -1
    for t in range(last + 1):
        values, _ = _to_temperature(
            stack.frames[t][roi], profile.emissivity_powder, profile
        )
        running = np.maximum(running, values)
        sel = v_roi & (t_roi == t)
        g_roi[sel] = running[sel]
    return FeatureMap(
        feature_id=FeatureId.MAX_PREDEPOSITION,
        layer=stack.layer,
        grid=grid,
        validity=valid,
        flags={"clamped": clamped},
    )


def spatter_frame_filter(
    frame_counts: np.ndarray,
    mask_sigma: float = 3.0,
    blob_sigma: float = 1.0,
    dilation_radius: int = 2,
    floor_sigmas: float = 6.0,
) -> tuple[np.ndarray, LabelGrid]:
    """One-frame spatter candidates: gradient mask, then -LoG blob clusters.

    Runs on raw counts, where camera noise is uniform across the frame. The
    scan mask is the high Otsu class of the Gaussian gradient magnitude,
    dilated; candidates are 8-connected clusters of the -LoG response outside
    the mask, above the larger of the Otsu threshold and a robust noise floor
    (floor_sigmas times the MAD-estimated -LoG noise), so a frame with no
    real blobs yields no clusters instead of thresholding pure noise.
    """
    frame = np.asarray(frame_counts, dtype=np.float64)
    empty = LabelGrid(labels=np.zeros(frame.shape, dtype=np.int32), count=0)
    grad = imageops.gaussian_gradient_magnitude(frame, mask_sigma)
    try:
        (g_thr,) = imageops.otsu_thresholds(grad, 2)
    except imageops.DegenerateHistogramError:
        return np.zeros(frame.shape, dtype=bool), empty
    scan_mask = imageops.dilate_disk(grad > g_thr, dilation_radius)

    neg_log = -imageops.gaussian_laplace(frame, blob_sigma)
    mad = float(np.median(np.abs(neg_log - np.median(neg_log))))
    noise_floor = floor_sigmas * mad / 0.6745
    # one extra ring beyond the mask so the melt spot's own -LoG skirt,
    # which is orders of magnitude above any blob, stays out of the search
    exclude = imageops.dilate_disk(scan_mask, 1)
    pos = np.where((neg_log > 0) & ~exclude, neg_log, 0.0)
    try:
        (b_thr,) = imageops.otsu_thresholds(pos, 2)
    except imageops.DegenerateHistogramError:
        return scan_mask, empty
    candidates = (neg_log > max(b_thr, noise_floor)) & ~exclude
    raw = imageops.label_components(candidates.astype(np.uint8), 8)

    # isolation gate: a spatter lands on cold powder, so the ring around a
    # genuine cluster sits at the powder baseline; hot-edge artifacts at line
    # ends and stripe boundaries have glowing neighbors and get rejected
    baseline = float(np.median(frame))
    sigma_est = float(np.median(np.abs(frame - baseline))) / 0.6745
    labels = np.zeros(frame.shape, dtype=np.int32)
    kept = 0
    for lbl in range(1, raw.count + 1):
        px = raw.labels == lbl
        ring = imageops.dilate_disk(px, 3) & ~imageops.dilate_disk(px, 1)
        if ring.any() and float(frame[ring].mean()) > baseline + 2.0 * sigma_est:
            continue
        kept += 1
        labels[px] = kept
    return scan_mask, LabelGrid(labels=labels, count=kept)


def spatter_layer(
    stack: LayerStack,
    scan_order: FeatureMap,
    profile: CalibrationProfile,
    params: FeatureParams | None = None,
) -> tuple[FeatureMap, FeatureMap, list[SpatterRecord]]:
    """Spatter generation (credited to the laser location) and landing maps.

    A per-layer registry of already-counted pixels prevents recounting a
    spatter that stays hot across consecutive frames.
    """
    params = params or FeatureParams()
    s = _scan_frames(scan_order)
    generation = np.zeros(stack.shape)
    landing = np.zeros(stack.shape)
    registry = np.zeros(stack.shape, dtype=bool)
    records: list[SpatterRecord] = []
    thr = params.activity(profile)

    # landings only matter where geometry gets built, so search a padded
    # window around the scanned region instead of the whole camera frame
    sy, sx = np.nonzero(s >= 0)
    if len(sx) == 0:
        roi = (slice(0, stack.shape[0]), slice(0, stack.shape[1]))
    else:
        pad = 12
        roi = (
            slice(max(0, sy.min() - pad), min(stack.shape[0], sy.max() + pad + 1)),
            slice(max(0, sx.min() - pad), min(stack.shape[1], sx.max() + pad + 1)),
        )
    y0, x0 = roi[0].start, roi[1].start
    s_roi = s[roi]

    for t in range(len(stack)):
        window = np.asarray(stack.frames[t][roi], dtype=np.float64)
        if float(window.max()) <= thr:
            continue  # no laser in view: nothing is emitting spatter
        _, clusters = spatter_frame_filter(
            window,
            mask_sigma=params.mask_sigma,
            blob_sigma=params.blob_sigma,
            dilation_radius=params.dilation_radius,
            floor_sigmas=params.spatter_floor_sigmas,
        )
        laser_here = s == t
        source = np.argwhere(laser_here)
        new_count = 0
        for lbl in range(1, clusters.count + 1):
            px = clusters.labels == lbl
            if registry[roi][px].any():
                continue  # seen in an earlier frame; count once
            # the melt front itself sculpts blob-like edges at line ends and
            # corners; anything whose surroundings are being scanned right
            # now is the laser, not a landing on powder
            near_s = s_roi[imageops.dilate_disk(px, 2)]
            if ((near_s >= 0) & (np.abs(near_s - t) <= 3)).any():
                continue
            coords = np.argwhere(px)
            coords = coords + np.array([y0, x0])
            new_count += 1
            landing[coords[:, 0], coords[:, 1]] += 1.0
            registry[coords[:, 0], coords[:, 1]] = True
            records.append(
                SpatterRecord(
                    frame=t,
                    landing_pixels=coords,
                    centroid=(float(coords[:, 1].mean()), float(coords[:, 0].mean())),
                    size=int(px.sum()),
                    source_pixels=source,
                )
            )
        if new_count:
            generation[laser_here] += new_count
    valid = s >= 0
    gen_map = FeatureMap(
        feature_id=FeatureId.SPATTER_GENERATION,
        layer=stack.layer,
        grid=generation,
        validity=valid.copy(),
    )
    land_map = FeatureMap(
        feature_id=FeatureId.SPATTER_LANDING,
        layer=stack.layer,
        grid=landing,
        validity=np.ones(stack.shape, dtype=bool),
    )
    return gen_map, land_map, records


def melt_pool_area(
    stack: LayerStack,
    scan_order: FeatureMap,
    profile: CalibrationProfile,
    threshold_counts: float | None = None,
    params: FeatureParams | None = None,
) -> FeatureMap:
    """Per-frame super-threshold pixel count written to that frame's laser pixels."""
    params = params or FeatureParams()
    thr = threshold_counts if threshold_counts is not None else params.melt(profile)
    s = _scan_frames(scan_order)
    grid = np.full(stack.shape, np.nan)
    for t in range(len(stack)):
        area = float((stack.frames[t] > thr).sum())
        grid[s == t] = area
    valid = s >= 0
    return FeatureMap(
        feature_id=FeatureId.MELT_POOL_AREA, layer=stack.layer, grid=grid, validity=valid
    )


def cooling_rate(
    stack: LayerStack,
    scan_order: FeatureMap,
    profile: CalibrationProfile,
    window: int = 30,
) -> FeatureMap:
    """(T[scan] - T[scan + window]) * fps / window in degC/s, as-printed emissivity.

    Pixels whose window extends past the stack are invalid, never zero-filled.
    """
    s = _scan_frames(scan_order)
    n = len(stack)
    valid = (s >= 0) & (s + window < n)
    grid = np.full(stack.shape, np.nan)
    eps = profile.emissivity_printed
    roi = _bbox_slices(valid)
    v_roi, s_roi, g_roi = valid[roi], s[roi], grid[roi]
    temps: dict[int, np.ndarray] = {}

    def temp_at(t: int) -> np.ndarray:
        if t not in temps:
            temps[t] = _to_temperature(stack.frames[t][roi], eps, profile)[0]
        return temps[t]

    for t in np.unique(s_roi[v_roi]):
        sel = v_roi & (s_roi == t)
        g_roi[sel] = (temp_at(int(t))[sel] - temp_at(int(t) + window)[sel]) * (
            stack.fps / window
        )
    return FeatureMap(
        feature_id=FeatureId.COOLING_RATE, layer=stack.layer, grid=grid, validity=valid
    )


def interpass_laplacian(
    interpass_map: FeatureMap, mask: LayerMask | None = None, sigma: float = 1.0
) -> FeatureMap:
    """Laplacian-of-Gaussian of the interpass field; flags recoat anomalies."""
    grid = imageops.gaussian_laplace(interpass_map.grid, sigma)
    validity = interpass_map.validity.copy()
    if mask is not None:
        validity &= mask.pixel_mask()
    return FeatureMap(
        feature_id=FeatureId.INTERPASS_LAPLACIAN,
        layer=interpass_map.layer,
        grid=grid,
        validity=validity,
    )


def asprinted_laplacian(
    stack: LayerStack,
    profile: CalibrationProfile,
    mask: LayerMask | None = None,
    sigma: float = 1.0,
) -> FeatureMap:
    """LoG of the final frame converted at as-printed emissivity."""
    temp, ok = _to_temperature(stack.frames[-1], profile.emissivity_printed, profile)
    grid = imageops.gaussian_laplace(temp, sigma)
    validity = ok
    if mask is not None:
        validity = validity & mask.pixel_mask()
    return FeatureMap(
        feature_id=FeatureId.ASPRINTED_LAPLACIAN,
        layer=stack.layer,
        grid=grid,
        validity=validity,
    )


@dataclass
class LayerFeatures:
    layer: int
    maps: dict[FeatureId, FeatureMap]
    spatter_records: list[SpatterRecord]


def extract_layer(
    stack: LayerStack,
    profile: CalibrationProfile,
    mask: LayerMask | None = None,
    params: FeatureParams | None = None,
) -> LayerFeatures:
    """Run every extractor for one layer. All feature ids are always present."""
    params = params or FeatureParams()
    intensity, order = heat_intensity_and_scan_order(stack, profile, params)
    ip = interpass(stack, profile, params)
    maps: dict[FeatureId, FeatureMap] = {
        FeatureId.HEAT_INTENSITY: intensity,
        FeatureId.SCAN_ORDER: order,
        FeatureId.INTERPASS: ip,
        FeatureId.LOCAL_PREDEPOSITION: local_predeposition(
            stack, order, profile, params.offset_frames
        ),
        FeatureId.MAX_PREDEPOSITION: max_predeposition(
            stack, order, profile, params.offset_frames
        ),
        FeatureId.MELT_POOL_AREA: melt_pool_area(stack, order, profile, params=params),
        FeatureId.COOLING_RATE: cooling_rate(
            stack, order, profile, params.cooling_window
        ),
        FeatureId.INTERPASS_LAPLACIAN: interpass_laplacian(ip, mask),
        FeatureId.ASPRINTED_LAPLACIAN: asprinted_laplacian(stack, profile, mask),
    }
    gen, land, records = spatter_layer(stack, order, profile, params)
    maps[FeatureId.SPATTER_GENERATION] = gen
    maps[FeatureId.SPATTER_LANDING] = land
    return LayerFeatures(layer=stack.layer, maps=maps, spatter_records=records)
