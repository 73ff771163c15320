"""Command-line workflow: calibrate, voxelize, simulate, extract, export, report.

The pipeline is deterministic given a config file and seed; the run manifest
records every effective parameter plus content hashes so a run can be
reproduced byte-for-byte. Wall-clock timings go to a separate sidecar file so
the manifest itself stays reproducible.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import features as feat
from . import geometry, radiometry, simulator, spatial, store
from .errors import ConfigError, IrmapError, ParameterError

_DATA_ERRORS = (
    "StlParseError",
    "StlTruncationError",
    "StoreFormatError",
    "StoreCorruptionError",
    "OutOfFrameError",
    "BelowFloorError",
    "NoPrescanError",
    "FeatureNotFoundError",
    "DegenerateHistogramError",
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


@dataclass
class RunConfig:
    """Effective parameters of one pipeline run (flags already merged in)."""

    stl: str = "box.stl"
    out: str = "features.irvx"
    frames_dir: str = ""  # empty = simulate in memory
    seed: int = 0
    jobs: int = 1
    layer_lo: int = 0
    layer_hi: int = -1  # -1 = all layers of the voxel grid
    features: tuple[int, ...] = ()  # empty = every feature

    pitch_x_um: float = 360.0
    pitch_y_um: float = 360.0
    pitch_z_um: float = 40.0

    cam_width: int = 640
    cam_height: int = 480
    origin_x: int = 320
    origin_y: int = 240
    fps: float = 30.0

    scan_speed_mm_s: float = 960.0
    hatch_um: float = 110.0
    stripe_width_mm: float = 10.0
    stripe_overlap_mm: float = 0.08
    rotation_per_layer_deg: float = 66.7
    layer_thickness_um: float = 40.0

    ambient_c: float = 80.0
    peak_c: float = 1200.0
    footprint_px: float = 1.5
    decay_s: float = 0.033

    noise_percent: float = 0.0  # of each layer's rendered dynamic range
    prescan_frames: int = 3
    tail_frames: int = 35
    spatter_count: int = 0
    spatter_peak_dt_c: float = 400.0
    spatter_decay_s: float = 0.15

    offset_frames: int = 10
    cooling_window: int = 30
    spatter_floor_sigmas: float = 6.0

    profile_path: str = ""  # empty = built-in defaults
    config_dir: str = "."
    config_sha256: str = ""

    def profile(self) -> radiometry.CalibrationProfile:
        if self.profile_path:
            path = self._resolve(self.profile_path)
            try:
                with open(path, encoding="utf-8") as fh:
                    return radiometry.profile_from_text(fh.read())
            except OSError as exc:
                raise ConfigError(f"cannot read profile {path}: {exc}") from exc
        return radiometry.CalibrationProfile()

    def _resolve(self, rel: str) -> str:
        import os

        return rel if os.path.isabs(rel) else os.path.join(self.config_dir, rel)

    def registration(self) -> spatial.PixelGridFrame:
        return spatial.PixelGridFrame(
            pitch_um=self.pitch_x_um,
            origin_px=(self.origin_x, self.origin_y),
            dims=(self.cam_width, self.cam_height),
        )

    def scan_params(self) -> simulator.ScanParameters:
        return simulator.ScanParameters(
            scan_speed_mm_s=self.scan_speed_mm_s,
            hatch_um=self.hatch_um,
            stripe_width_mm=self.stripe_width_mm,
            stripe_overlap_mm=self.stripe_overlap_mm,
            rotation_per_layer_deg=self.rotation_per_layer_deg,
            layer_thickness_um=self.layer_thickness_um,
        )

    def thermal_params(self) -> simulator.ThermalParams:
        return simulator.ThermalParams(
            ambient_c=self.ambient_c,
            peak_c=self.peak_c,
            footprint_px=self.footprint_px,
            decay_s=self.decay_s,
        )

    def feature_params(self, profile) -> feat.FeatureParams:
        return feat.FeatureParams(
            offset_frames=self.offset_frames,
            cooling_window=self.cooling_window,
            spatter_floor_sigmas=self.spatter_floor_sigmas,
        )


_SECTION_KEYS = {
    "run": {
        "out": ("out", str),
        "frames_dir": ("frames_dir", str),
        "seed": ("seed", int),
        "jobs": ("jobs", int),
        "layers": ("layers", str),
        "features": ("features", str),
        "profile": ("profile_path", str),
    },
    "geometry": {
        "stl": ("stl", str),
        "pitch_um": ("pitch_um", str),
    },
    "camera": {
        "width": ("cam_width", int),
        "height": ("cam_height", int),
        "origin_x": ("origin_x", int),
        "origin_y": ("origin_y", int),
        "fps": ("fps", float),
    },
    "scan": {
        "scan_speed_mm_s": ("scan_speed_mm_s", float),
        "hatch_um": ("hatch_um", float),
        "stripe_width_mm": ("stripe_width_mm", float),
        "stripe_overlap_mm": ("stripe_overlap_mm", float),
        "rotation_per_layer_deg": ("rotation_per_layer_deg", float),
        "layer_thickness_um": ("layer_thickness_um", float),
    },
    "thermal": {
        "ambient_c": ("ambient_c", float),
        "peak_c": ("peak_c", float),
        "footprint_px": ("footprint_px", float),
        "decay_s": ("decay_s", float),
    },
    "simulation": {
        "noise_percent": ("noise_percent", float),
        "prescan_frames": ("prescan_frames", int),
        "tail_frames": ("tail_frames", int),
        "spatter_count": ("spatter_count", int),
        "spatter_peak_dt_c": ("spatter_peak_dt_c", float),
        "spatter_decay_s": ("spatter_decay_s", float),
    },
    "features": {
        "offset_frames": ("offset_frames", int),
        "cooling_window": ("cooling_window", int),
        "spatter_floor_sigmas": ("spatter_floor_sigmas", float),
    },
}


def _parse_layers(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split("..")
        return int(lo), int(hi)
    except ValueError as exc:
        raise ConfigError(f"layers must look like 'a..b', got {text!r}") from exc


def _parse_features(text: str) -> tuple[int, ...]:
    if not text.strip() or text.strip().lower() == "all":
        return ()
    ids = []
    for name in text.split(","):
        key = name.strip().upper()
        if key not in feat.FeatureId.__members__:
            raise ConfigError(f"unknown feature {name.strip()!r}")
        ids.append(int(feat.FeatureId[key]))
    return tuple(ids)


def load_config(path: str) -> RunConfig:
    """Read a UTF-8 key-value config file into a validated RunConfig."""
    import os

    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        parser.read_string(text)
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc

    cfg = RunConfig()
    cfg.config_dir = os.path.dirname(os.path.abspath(path))
    cfg.config_sha256 = hashlib.sha256(text.encode("utf-8")).hexdigest()
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        keys = _SECTION_KEYS[section]
        for key, raw in parser[section].items():
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            attr, conv = keys[key]
            if attr == "layers":
                cfg.layer_lo, cfg.layer_hi = _parse_layers(raw)
            elif attr == "features":
                cfg.features = _parse_features(raw)
            elif attr == "pitch_um":
                parts = [p.strip() for p in raw.split(",")]
                if len(parts) != 3:
                    raise ConfigError(f"pitch_um needs three values, got {raw!r}")
                cfg.pitch_x_um, cfg.pitch_y_um, cfg.pitch_z_um = map(float, parts)
            else:
                try:
                    setattr(cfg, attr, conv(raw))
                except ValueError as exc:
                    raise ConfigError(
                        f"bad value for {section}.{key}: {raw!r}"
                    ) from exc
    stl = cfg._resolve(cfg.stl)
    if not os.path.exists(stl):
        raise ConfigError(f"STL file not found: {stl}")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be at least 1")
    if not (0.0 <= cfg.noise_percent <= 100.0):
        raise ConfigError("noise_percent must be in [0, 100]")
    return cfg


@dataclass
class LayerResult:
    layer: int
    frame_count: int
    features: feat.LayerFeatures
    truth: simulator.GroundTruth | None
    mask: geometry.LayerMask
    seconds: float = 0.0


@dataclass
class PipelineResult:
    config: RunConfig
    store: store.FeatureStore
    store_bytes: bytes
    manifest_text: str
    reduction: store.ReductionReport
    layers: list[LayerResult] = field(default_factory=list)


def _simulate_layer(cfg: RunConfig, vox: geometry.VoxelMesh, layer: int):
    """Render one layer's raw frame stack plus its ground truth."""
    reg = cfg.registration()
    mask = geometry.layer_mask(vox, layer, reg)
    path = simulator.generate_scan_path(mask, cfg.scan_params(), layer)
    profile = cfg.profile()
    schedule = simulator.SpatterSchedule()
    if cfg.spatter_count > 0 and len(path):
        schedule = simulator.make_spatter_schedule(
            path,
            mask,
            cfg.spatter_count,
            peak_dt_c=cfg.spatter_peak_dt_c,
            decay_s=cfg.spatter_decay_s,
            fps=cfg.fps,
            prescan_frames=cfg.prescan_frames,
            seed=cfg.seed + 7919 * layer,
        )
    stack, truth = simulator.render_frames(
        path,
        (cfg.cam_width, cfg.cam_height),
        cfg.thermal_params(),
        profile,
        spatters=schedule,
        noise_sigma=0.0,
        fps=cfg.fps,
        prescan_frames=cfg.prescan_frames,
        tail_frames=cfg.tail_frames,
        layer=layer,
    )
    if cfg.noise_percent > 0:
        span = float(stack.frames.max() - stack.frames.min())
        sigma = cfg.noise_percent / 100.0 * span
        rng = np.random.default_rng(cfg.seed + 9973 * layer)
        for k in range(len(stack)):  # frame at a time to bound the noise buffer
            noisy = stack.frames[k] + rng.normal(0.0, sigma, stack.shape)
            stack.frames[k] = np.clip(noisy, 1.0, 65535.0)
    truth.true_temperatures = None  # keep the multi-layer run light on memory
    return stack, truth, mask


def _load_layer(cfg: RunConfig, vox: geometry.VoxelMesh, layer: int):
    """Read one layer's frame stack from a directory of stack files."""
    import os

    reg = cfg.registration()
    mask = geometry.layer_mask(vox, layer, reg)
    path = os.path.join(cfg._resolve(cfg.frames_dir), f"layer_{layer:04d}.irfs")
    if not os.path.exists(path):
        raise ConfigError(f"frame stack not found: {path}")
    frames, fps, recoat = store.read_layer_stack(path)
    stack = feat.LayerStack(frames=frames, fps=fps, layer=layer, recoat_boundary=recoat)
    return stack, None, mask


def process_layer(cfg: RunConfig, vox: geometry.VoxelMesh, layer: int) -> LayerResult:
    t0 = time.perf_counter()
    if cfg.frames_dir:
        stack, truth, mask = _load_layer(cfg, vox, layer)
    else:
        stack, truth, mask = _simulate_layer(cfg, vox, layer)
    profile = cfg.profile()
    result = feat.extract_layer(stack, profile, mask, cfg.feature_params(profile))
    return LayerResult(
        layer=layer,
        frame_count=len(stack),
        features=result,
        truth=truth,
        mask=mask,
        seconds=time.perf_counter() - t0,
    )


def _voxelize_config(cfg: RunConfig) -> geometry.VoxelMesh:
    stl = cfg._resolve(cfg.stl)
    with open(stl, "rb") as fh:
        mesh = geometry.parse_stl(fh.read())
    return geometry.voxelize(mesh, (cfg.pitch_x_um, cfg.pitch_y_um, cfg.pitch_z_um))


def _layer_range(cfg: RunConfig, vox: geometry.VoxelMesh) -> range:
    hi = vox.layer_count() - 1 if cfg.layer_hi < 0 else cfg.layer_hi
    if not (0 <= cfg.layer_lo <= hi < vox.layer_count()):
        raise ConfigError(
            f"layer range {cfg.layer_lo}..{hi} outside grid with "
            f"{vox.layer_count()} layers"
        )
    return range(cfg.layer_lo, hi + 1)


def _manifest(
    cfg: RunConfig,
    results: list[LayerResult],
    report: store.ReductionReport,
    store_sha: str,
    stl_sha: str,
) -> str:
    lines = ["# run manifest", "[run]"]
    lines.append(f"config_sha256 = {cfg.config_sha256}")
    lines.append(f"stl_sha256 = {stl_sha}")
    lines.append(f"store_sha256 = {store_sha}")
    lines.append(f"raw_bytes = {report.raw_bytes}")
    lines.append(f"stored_bytes = {report.stored_bytes}")
    lines.append(f"reduction_ratio = {report.ratio!r}")
    lines.append(f"meets_99_percent = {str(report.meets_99_percent).lower()}")
    lines.append("")
    lines.append("[parameters]")
    skip = {"config_dir", "config_sha256"}
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        if f.name in skip:
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)!r}")
    for r in results:
        lines.append("")
        lines.append(f"[layer {r.layer}]")
        lines.append(f"frames = {r.frame_count}")
        lines.append(f"mask_pixels = {len(r.mask)}")
        lines.append(f"spatter_records = {len(r.features.spatter_records)}")
        if r.truth is not None:
            lines.append(f"spatter_injected = {len(r.truth.spatter_events)}")
    lines.append("")
    return "\n".join(lines)


def run_pipeline(cfg: RunConfig, write_files: bool = True) -> PipelineResult:
    """Simulate (or load) every layer, extract features, write store + manifest."""
    import os

    vox = _voxelize_config(cfg)
    layers = _layer_range(cfg, vox)
    if cfg.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(process_layer, [cfg] * len(layers), [vox] * len(layers), layers))
    else:
        results = [process_layer(cfg, vox, layer) for layer in layers]
    results.sort(key=lambda r: r.layer)

    wanted = set(cfg.features) if cfg.features else {int(f) for f in feat.FeatureId}
    fstore = store.FeatureStore(
        meta=store.StoreMeta(
            pitch_um=(cfg.pitch_x_um, cfg.pitch_y_um, cfg.pitch_z_um),
            dims=vox.dims,
            parts=[(1, "part")],
        )
    )
    for r in results:
        for fid, fmap in sorted(r.features.maps.items()):
            if int(fid) not in wanted:
                continue
            grid = np.where(fmap.validity, fmap.grid, np.nan)
            fstore.add(r.layer, int(fid), geometry.map_layer_feature(grid, r.mask))
    blob = store.write_store(fstore)
    report = store.reduction_report(
        (cfg.cam_width, cfg.cam_height), [r.frame_count for r in results], len(blob)
    )
    with open(cfg._resolve(cfg.stl), "rb") as fh:
        stl_sha = hashlib.sha256(fh.read()).hexdigest()
    manifest = _manifest(
        cfg, results, report, hashlib.sha256(blob).hexdigest(), stl_sha
    )
    if write_files:
        out = cfg._resolve(cfg.out)
        with open(out, "wb") as fh:
            fh.write(blob)
        with open(out + ".manifest.txt", "w", encoding="utf-8") as fh:
            fh.write(manifest)
        timing = [f"layer {r.layer}: {r.seconds:.3f} s" for r in results]
        with open(out + ".timings.txt", "w", encoding="utf-8") as fh:
            fh.write("\n".join(timing) + "\n")
    return PipelineResult(
        config=cfg,
        store=fstore,
        store_bytes=blob,
        manifest_text=manifest,
        reduction=report,
        layers=results,
    )


DEMO_CONFIG = """\
[run]
out = demo.irvx
seed = 20260826
jobs = 1
layers = 0..19

[geometry]
stl = box.stl
pitch_um = 360,360,40

[camera]
width = 640
height = 480
origin_x = 320
origin_y = 240
fps = 30

[scan]
scan_speed_mm_s = 960
hatch_um = 110
stripe_width_mm = 10
stripe_overlap_mm = 0.08
rotation_per_layer_deg = 66.7
layer_thickness_um = 40

[thermal]
ambient_c = 80
peak_c = 1200
footprint_px = 1.5
decay_s = 0.033

[simulation]
noise_percent = 1.0
prescan_frames = 3
tail_frames = 35
spatter_count = 10
spatter_peak_dt_c = 400
spatter_decay_s = 0.15

[features]
offset_frames = 10
cooling_window = 30
"""


def write_demo(out_dir: str) -> str:
    """Write the bundled 20-layer demo build (config + geometry); returns config path."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    mesh = geometry.box_mesh((19.44, 19.44, 0.8))
    with open(os.path.join(out_dir, "box.stl"), "wb") as fh:
        fh.write(geometry.mesh_to_binary_stl(mesh))
    cfg_path = os.path.join(out_dir, "demo.ini")
    with open(cfg_path, "w", encoding="utf-8") as fh:
        fh.write(DEMO_CONFIG)
    return cfg_path


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    if getattr(args, "layers", None):
        cfg.layer_lo, cfg.layer_hi = _parse_layers(args.layers)
    if getattr(args, "features", None):
        cfg.features = _parse_features(args.features)
    return cfg


def _cmd_calibrate_spatial(args) -> int:
    with open(args.points, encoding="utf-8") as fh:
        pairs = spatial.parse_correspondences(fh.read())
    h = spatial.estimate_homography(pairs)
    print("homography (row-major):")
    for row in h.matrix:
        print("  " + " ".join(f"{v: .10g}" for v in row))
    print(f"max reprojection residual: {h.max_residual:.6g} px")
    if args.out:
        np.savetxt(args.out, h.matrix, fmt="%.17g")
    return EXIT_OK


def _read_samples(path: str) -> list[tuple[float, float]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            t, c = (float(v) for v in line.split(","))
            out.append((c, t))  # fit consumes (counts, reference temp)
    return out


def _cmd_calibrate_thermal(args) -> int:
    profile = radiometry.CalibrationProfile()
    samples = _read_samples(args.samples)
    eps, resid = radiometry.fit_emissivity(samples, profile)
    print(f"fitted emissivity: {eps:.4f} (residual std {resid:.3f} degC)")
    if args.out:
        if args.surface == "powder":
            profile = radiometry.CalibrationProfile(emissivity_powder=eps)
        else:
            profile = radiometry.CalibrationProfile(emissivity_printed=eps)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(radiometry.profile_to_text(profile))
        print(f"profile written to {args.out}")
    return EXIT_OK


def _cmd_voxelize(args) -> int:
    with open(args.stl, "rb") as fh:
        mesh = geometry.parse_stl(fh.read())
    pitch = tuple(float(v) for v in args.pitch.split(","))
    if len(pitch) != 3:
        raise ConfigError(f"pitch needs three values, got {args.pitch!r}")
    vox = geometry.voxelize(mesh, pitch)
    nx, ny, nz = vox.dims
    print(f"grid: {nx} x {ny} x {nz} voxels at {pitch} um")
    print(f"occupied: {vox.occupied_count()}")
    print(f"watertight: {vox.exact}")
    if args.out:
        ii, jj, kk = np.nonzero(vox.occupancy)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("i,j,k\n")
            for i, j, k in zip(ii, jj, kk):
                fh.write(f"{i},{j},{k}\n")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    import os

    cfg = _apply_overrides(load_config(args.config), args)
    vox = _voxelize_config(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    for layer in _layer_range(cfg, vox):
        stack, truth, _mask = _simulate_layer(cfg, vox, layer)
        store.write_layer_stack(
            os.path.join(args.out_dir, f"layer_{layer:04d}.irfs"),
            stack.frames,
            fps=cfg.fps,
        )
        with open(
            os.path.join(args.out_dir, f"layer_{layer:04d}.spatter.csv"),
            "w",
            encoding="utf-8",
        ) as fh:
            fh.write("emit_frame,landing_x,landing_y,peak_dt_c,decay_s\n")
            for ev in truth.spatter_events:
                fh.write(
                    f"{ev.emit_frame},{ev.landing_px[0]},{ev.landing_px[1]},"
                    f"{ev.peak_dt_c},{ev.decay_s}\n"
                )
        np.save(
            os.path.join(args.out_dir, f"layer_{layer:04d}.scan_order.npy"),
            truth.true_scan_order,
        )
        print(f"layer {layer}: {len(stack)} frames")
    return EXIT_OK


def _cmd_extract(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    result = run_pipeline(cfg)
    print(f"store written: {cfg._resolve(cfg.out)}")
    print(f"blocks: {len(result.store.blocks)}")
    print(f"reduction ratio: {result.reduction.ratio:.6f}")
    return EXIT_OK


def _cmd_export(args) -> int:
    with open(args.store, "rb") as fh:
        fstore = store.read_store(fh.read())
    key = args.feature.strip().upper()
    if key not in feat.FeatureId.__members__:
        raise ConfigError(f"unknown feature {args.feature!r}")
    blob = store.export_grid(fstore, args.layer, int(feat.FeatureId[key]), args.format)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    print(f"wrote {len(blob)} bytes to {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    import os

    with open(args.store, "rb") as fh:
        data = fh.read()
    fstore = store.read_store(data)
    nx, ny, nz = fstore.meta.dims
    print(f"grid: {nx} x {ny} x {nz} at {fstore.meta.pitch_um} um")
    print(f"blocks: {len(fstore.blocks)}")
    layers = sorted({k[0] for k in fstore.blocks})
    print(f"layers: {layers[0]}..{layers[-1]}" if layers else "layers: none")
    total = sum(len(b.indices) for b in fstore.blocks.values())
    print(f"entries: {total}")
    manifest = args.store + ".manifest.txt"
    if os.path.exists(manifest):
        with open(manifest, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith(("reduction_ratio", "raw_bytes", "stored_bytes")):
                    print(line.strip())
    return EXIT_OK


def _cmd_demo(args) -> int:
    cfg_path = write_demo(args.out_dir)
    print(f"demo config written: {cfg_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="irmap",
        description="Layer-wise infrared feature extraction for powder bed builds.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("calibrate-spatial", help="fit a homography from marker points")
    sp.add_argument("--points", required=True, help="world/image correspondence file")
    sp.add_argument("--out", help="write the 3x3 matrix to this file")
    sp.set_defaults(func=_cmd_calibrate_spatial)

    sp = sub.add_parser("calibrate-thermal", help="fit emissivity from temp,counts samples")
    sp.add_argument("--samples", required=True, help="CSV of temp_c,counts lines")
    sp.add_argument("--surface", choices=("powder", "printed"), default="powder")
    sp.add_argument("--out", help="write a calibration profile here")
    sp.set_defaults(func=_cmd_calibrate_thermal)

    sp = sub.add_parser("voxelize", help="voxelize an STL at camera pitch")
    sp.add_argument("--stl", required=True)
    sp.add_argument("--pitch", default="360,360,40", help="x,y,z pitch in um")
    sp.add_argument("--out", help="write occupied voxel indices as CSV")
    sp.set_defaults(func=_cmd_voxelize)

    sp = sub.add_parser("simulate", help="render synthetic frame stacks to disk")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--layers")
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("extract", help="run the full pipeline and write a store")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.add_argument("--layers")
    sp.add_argument("--features", help="comma list, default all")
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=_cmd_extract)

    sp = sub.add_parser("export", help="export one stored layer/feature grid")
    sp.add_argument("--store", required=True)
    sp.add_argument("--layer", type=int, required=True)
    sp.add_argument("--feature", required=True)
    sp.add_argument("--format", choices=("csv", "vtk", "pgm-heatmap"), default="csv")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_export)

    sp = sub.add_parser("report", help="summarize a store and its manifest")
    sp.add_argument("--store", required=True)
    sp.set_defaults(func=_cmd_report)

    sp = sub.add_parser("demo", help="write the bundled 20-layer demo build")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=_cmd_demo)

    return p


def _classify(exc: IrmapError) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if type(exc).__name__ in _DATA_ERRORS:
        return EXIT_DATA
    return EXIT_INTERNAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IrmapError as exc:
        code = _classify(exc)
        kind = {EXIT_DATA: "data error", EXIT_INTERNAL: "internal error"}[code]
        print(f"{kind}: {exc}", file=sys.stderr)
        return code
    except (AssertionError, ParameterError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
