"""Command-line entry point: ``rfsplat <command> [options]``.

Every command accepts ``--config FILE`` (flat ``key = value`` lines, ``#``
comments) and ``--set KEY=VALUE`` overrides; dedicated flags override both.
Each run writes ``<output_dir>/<command>.manifest.json`` holding the
effective configuration, SHA-256 digests of the outputs and, on failure,
the stage that failed.

Exit codes: 0 success, 2 usage or validation error, 3 runtime failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import __version__
from .evaluation import (
    BENCH_METHODS,
    benchmark,
    generate_scene,
    run_comparison,
    sample_scan,
    write_reports_csv,
)
from .exceptions import ConfigError, DegenerateDataError, InvalidInputError
from .geometry import AngularRange
from .gp import GpSettings
from .localized import RegionPartition, fit_localized
from .ply import export_ply, import_ply
from .pointcloud import (
    build_point_cloud,
    export_scan,
    import_scan,
    rasterize_depth_field,
    raster_centers,
    sample_query_locations,
    write_raster_csv,
)
from .splat import CameraModel, points_to_gaussians, render_image, write_png, write_ppm

log = logging.getLogger("rfsplat")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


@dataclass
class RunConfig:
    scan: str = ""
    scan_format: str = "auto"
    output_dir: str = "."
    regions: str = "6x2"
    az_min_deg: float = -90.0
    az_max_deg: float = 90.0
    el_min_deg: float = -20.0
    el_max_deg: float = 20.0
    noise_variance: float = 0.04
    lengthscale: float = 0.1
    lengthscale_min: float = 1e-3
    lengthscale_max: float = 2.0
    grid_points: int = 32
    signal_variance: float = 0.0
    quantile: float = 0.7
    queries: int = 20000
    seed: int = 0
    format: str = "binary"
    raster_width: int = 180
    raster_height: int = 40
    n_jobs: int = 1
    ply: str = ""
    camera: str = ""
    image: str = ""
    point_radius: float = 0.05
    opacity: float = 0.8
    patches: int = 5
    noise_std: float = 0.3
    observations: int = 500
    trials: int = 1
    sizes: str = "500,1000,2000"
    bench_regions: str = "1x1,6x2"
    bench_methods: str = ""
    repetitions: int = 3
    parallel: bool = False

    def validate(self):
        _check(self.quantile > 0 and self.quantile <= 1, "quantile", "must lie in (0, 1]")
        _check(self.queries >= 1, "queries", "must be >= 1")
        _check(self.noise_variance >= 0, "noise_variance", "must be >= 0")
        _check(self.lengthscale > 0, "lengthscale", "must be > 0")
        _check(0 < self.lengthscale_min < self.lengthscale_max, "lengthscale_min",
               "must satisfy 0 < lengthscale_min < lengthscale_max")
        _check(self.grid_points >= 1, "grid_points", "must be >= 1")
        _check(self.signal_variance >= 0, "signal_variance", "must be >= 0 (0 = empirical)")
        _check(self.format in ("ascii", "binary"), "format", "must be ascii or binary")
        _check(self.scan_format in ("auto", "csv", "json"), "scan_format", "must be auto, csv or json")
        _check(self.raster_width >= 1 and self.raster_height >= 1, "raster_width", "must be >= 1")
        _check(self.point_radius > 0, "point_radius", "must be > 0")
        _check(0 < self.opacity <= 1, "opacity", "must lie in (0, 1]")
        _check(self.patches >= 0, "patches", "must be >= 0")
        _check(self.noise_std >= 0, "noise_std", "must be >= 0")
        _check(self.observations >= 1, "observations", "must be >= 1")
        _check(self.trials >= 1, "trials", "must be >= 1")
        _check(self.repetitions >= 3, "repetitions", "must be >= 3")
        self.partition_dims()
        self.domain()
        return self

    def partition_dims(self):
        return _parse_dims(self.regions, "regions")

    def domain(self):
        try:
            return AngularRange.from_degrees(
                self.az_min_deg, self.az_max_deg, self.el_min_deg, self.el_max_deg
            )
        except InvalidInputError as exc:
            raise ConfigError(f"domain: {exc}", key="az_min_deg") from exc

    def partition(self):
        return RegionPartition(self.domain(), *self.partition_dims())

    def gp_settings(self):
        return GpSettings(
            noise_variance=self.noise_variance,
            lengthscale=self.lengthscale,
            signal_variance=self.signal_variance or None,
            lengthscale_bounds=(self.lengthscale_min, self.lengthscale_max),
            grid_points=self.grid_points,
        )


def _check(ok, key, message):
    if not ok:
        raise ConfigError(f"{key} {message}", key=key)


def _parse_dims(text, key):
    try:
        a, b = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"{key} must look like AxB, got {text!r}", key=key) from None
    if a < 1 or b < 1:
        raise ConfigError(f"{key} needs positive cell counts", key=key)
    return a, b


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, value):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}", key=key)
    kind = _FIELD_TYPES[key]
    text = str(value).strip()
    try:
        if kind in (bool, "bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"invalid value {text!r} for {key}", key=key) from None
    return text


def read_config_file(path):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value", key=line)
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = _coerce(key, value)
    return values


def build_config(args):
    values = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise FileNotFoundError(args.config)
        values.update(read_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}", key=item)
        key, value = item.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), value)
    for key in _FIELD_TYPES:
        flag = getattr(args, f"opt_{key}", None)
        if flag is not None:
            values[key] = _coerce(key, flag)
    return RunConfig(**values).validate()


# -- helpers -------------------------------------------------------------------

def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, command, cfg, fallback_dir="."):
        self.command = command
        self.cfg = cfg
        self.fallback_dir = fallback_dir
        self.stage = "start"
        self.outputs = {}
        self.stats = {}
        self.status = "running"
        self.error = None

    def add_output(self, path):
        self.outputs[os.path.basename(path)] = _digest(path)

    def write(self):
        out_dir = self.cfg.output_dir if self.cfg is not None else self.fallback_dir
        os.makedirs(out_dir, exist_ok=True)
        doc = {
            "command": self.command,
            "version": __version__,
            "status": self.status,
            "stage": self.stage,
            "config": asdict(self.cfg) if self.cfg is not None else None,
            "outputs": self.outputs,
            "stats": self.stats,
        }
        if self.error:
            doc["error"] = self.error
        path = os.path.join(out_dir, f"{self.command}.manifest.json")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _load_scan(cfg):
    if not cfg.scan:
        raise ConfigError("scan path is required", key="scan")
    if not os.path.exists(cfg.scan):
        raise FileNotFoundError(cfg.scan)
    fmt = cfg.scan_format
    if fmt == "auto":
        fmt = "json" if cfg.scan.lower().endswith(".json") else "csv"
    with open(cfg.scan, "rb") as fh:
        return import_scan(fh, fmt)


def _fit(cfg, scan):
    return fit_localized(
        scan.locations, scan.depth, cfg.partition(), cfg.gp_settings(), n_jobs=cfg.n_jobs
    )


def _out(cfg, name):
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, name)


# -- commands ------------------------------------------------------------------

def cmd_reconstruct(cfg, man):
    man.stage = "load"
    scan = _load_scan(cfg)
    man.stage = "fit"
    model = _fit(cfg, scan)
    man.stage = "rasterize"
    mean, var = rasterize_depth_field(
        model, cfg.domain(), cfg.raster_width, cfg.raster_height, n_jobs=cfg.n_jobs
    )
    man.stage = "write"
    for name, grid in (("mean.csv", mean), ("variance.csv", var)):
        path = _out(cfg, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            write_raster_csv(grid, cfg.domain(), fh)
        man.add_output(path)
    man.stats.update(
        n_observations=len(scan),
        empty_regions=model.empty_regions,
        lengthscales=[None if p is None else p.kernel.lengthscale for p in model.posteriors],
    )


def cmd_pointcloud(cfg, man):
    man.stage = "load"
    scan = _load_scan(cfg)
    man.stage = "fit"
    model = _fit(cfg, scan)
    man.stage = "predict"
    queries = sample_query_locations(cfg.domain(), cfg.queries, cfg.seed)
    built = build_point_cloud(model, queries, cfg.quantile, n_jobs=cfg.n_jobs)
    man.stage = "write"
    path = _out(cfg, "cloud.ply")
    encoding = "ascii" if cfg.format == "ascii" else "binary_little_endian"
    with open(path, "wb") as fh:
        export_ply(built.cloud, fh, encoding)
    man.add_output(path)
    man.stats.update(
        n_queries=built.n_queries,
        retained=built.n_retained,
        dropped_variance=built.n_dropped_variance,
        dropped_empty_region=built.n_dropped_empty,
        variance_threshold=None if np.isnan(built.threshold) else built.threshold,
        warning=built.warning,
    )


def cmd_render(cfg, man):
    man.stage = "load"
    for key in ("ply", "camera"):
        path = getattr(cfg, key)
        if not path:
            raise ConfigError(f"{key} path is required", key=key)
        if not os.path.exists(path):
            raise FileNotFoundError(path)
    with open(cfg.ply, "rb") as fh:
        cloud = import_ply(fh)
    with open(cfg.camera, encoding="utf-8") as fh:
        cam = CameraModel.load(fh)
    man.stage = "render"
    image = render_image(points_to_gaussians(cloud, cfg.point_radius, cfg.opacity), cam)
    man.stage = "write"
    path = cfg.image or _out(cfg, "render.ppm")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        if path.lower().endswith(".png"):
            write_png(image, fh)
        else:
            write_ppm(image, fh)
    man.add_output(path)
    man.stats.update(n_points=len(cloud), width=cam.width, height=cam.height)


def cmd_synth(cfg, man):
    man.stage = "generate"
    domain = cfg.domain()
    scene = generate_scene(domain, cfg.patches, cfg.seed, cfg.noise_std)
    scan = sample_scan(scene, cfg.observations, seed=cfg.seed + 1)
    man.stage = "write"
    fmt = "json" if cfg.scan_format == "json" else "csv"
    path = cfg.scan or _out(cfg, f"scan.{fmt}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        export_scan(scan, fh, fmt)
    man.add_output(path)
    centers = raster_centers(domain, cfg.raster_width, cfg.raster_height)
    truth = scene.depth(centers[:, 0], centers[:, 1]).reshape(cfg.raster_height, cfg.raster_width)
    tpath = _out(cfg, "truth.csv")
    with open(tpath, "w", encoding="utf-8", newline="\n") as fh:
        write_raster_csv(truth, domain, fh)
    man.add_output(tpath)
    man.stats.update(n_observations=len(scan), n_patches=len(scene.patches))


def cmd_eval(cfg, man):
    man.stage = "evaluate"
    reports = []
    for trial in range(cfg.trials):
        seed = cfg.seed + trial
        scene = generate_scene(cfg.domain(), cfg.patches, seed, cfg.noise_std)
        scan = sample_scan(scene, cfg.observations, seed=seed + 1000)
        detected = sample_scan(scene, 5 * cfg.observations, seed=seed + 2000).locations
        reports += run_comparison(
            scene, scan, cfg.partition(), cfg.gp_settings(), cfg.raster_width,
            cfg.raster_height, n_jobs=cfg.n_jobs, detected=detected,
        )
    rows = []
    for r in reports:
        row = asdict(r)
        row.pop("fit_seconds")
        row.pop("predict_seconds")
        rows.append(row)
    man.stage = "write"
    path = _out(cfg, "eval.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_reports_csv([_flat(r) for r in rows], fh)
    man.add_output(path)
    conv = [r.mae for r in reports if r.method == "conventional"]
    loc = [r.mae for r in reports if r.method == "localized"]
    man.stats.update(mean_mae_conventional=float(np.mean(conv)), mean_mae_localized=float(np.mean(loc)))
    for r in reports:
        print(f"seed={r.config['seed']} {r.method:12s} MAE={r.mae:.3f} m RMSE={r.rmse:.3f} m")


def _flat(row):
    cfg = row.pop("config", {})
    row.update({f"config_{k}": v for k, v in cfg.items()})
    return row


def cmd_bench(cfg, man):
    man.stage = "benchmark"
    try:
        sizes = [int(s) for s in cfg.sizes.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"sizes must be a comma list of integers, got {cfg.sizes!r}", key="sizes") from None
    parts = [_parse_dims(p.strip(), "bench_regions") for p in cfg.bench_regions.split(",") if p.strip()]
    methods = [m.strip() for m in cfg.bench_methods.split(",") if m.strip()] or None
    bad = [m for m in methods or () if m not in BENCH_METHODS]
    if bad:
        raise ConfigError(f"bench_methods: unknown method(s) {bad}", key="bench_methods")
    rows = benchmark(sizes, parts, cfg.repetitions, cfg.seed, (cfg.raster_width, cfg.raster_height),
                     cfg.gp_settings(), parallel=cfg.parallel, domain=cfg.domain(), methods=methods)
    man.stage = "write"
    path = _out(cfg, "bench.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_reports_csv(rows, fh)
    # Timings differ between runs, so the bench CSV digest is informative only.
    man.add_output(path)
    for r in rows:
        speed = r["speedup_vs_conventional"]
        print(f"T={r['n_observations']:>6} R={r['regions']:>5} {r['method']:>18s} "
              f"{r['median_seconds']:.3f} s" + ("" if speed is None else f"  x{speed:.1f}"))


COMMANDS = {
    "reconstruct": cmd_reconstruct,
    "pointcloud": cmd_pointcloud,
    "render": cmd_render,
    "bench": cmd_bench,
    "eval": cmd_eval,
    "synth": cmd_synth,
}

_HELP = {
    "reconstruct": "fit the localized GP to a scan and write mean/variance raster CSVs",
    "pointcloud": "sample directions, keep low-variance depths and write a PLY cloud",
    "render": "splat a PLY cloud through a camera into a PPM or PNG image",
    "bench": "time conventional vs localized GP fit+predict (CSV)",
    "eval": "compare conventional and localized GP accuracy on synthetic scenes (CSV)",
    "synth": "generate a synthetic scene, its sparse scan and the truth raster",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rfsplat", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=_HELP[name], description=_HELP[name])
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--output-dir", dest="opt_output_dir", help="directory for outputs and manifest")
        p.add_argument("--seed", dest="opt_seed", help="random seed (default 0)")
        p.add_argument("--regions", dest="opt_regions", help="partition grid AxB (default 6x2)")
        p.add_argument("--quantile", dest="opt_quantile", help="variance quantile kept in (0, 1] (default 0.7)")
        p.add_argument("--queries", dest="opt_queries", help="number of random query directions (default 20000)")
        p.add_argument("--format", dest="opt_format", help="PLY encoding: ascii or binary (default binary)")
        p.add_argument("--jobs", dest="opt_n_jobs", help="threads for region fits (-1 = all)")
        if name in ("reconstruct", "pointcloud"):
            p.add_argument("scan", nargs="?", default=None, help="scan file (.csv or .json)")
        if name == "synth":
            p.add_argument("--out", dest="opt_scan", help="scan file to write")
        if name in ("synth", "eval"):
            p.add_argument("--patches", dest="opt_patches")
            p.add_argument("--noise-std", dest="opt_noise_std")
            p.add_argument("--observations", dest="opt_observations")
        if name == "eval":
            p.add_argument("--trials", dest="opt_trials")
        if name == "render":
            p.add_argument("ply", nargs="?", default=None, help="point cloud PLY")
            p.add_argument("camera", nargs="?", default=None, help="camera JSON")
            p.add_argument("image", nargs="?", default=None, help="output .ppm or .png")
            p.add_argument("--radius", dest="opt_point_radius", help="splat radius in m (default 0.05)")
            p.add_argument("--opacity", dest="opt_opacity", help="splat opacity (default 0.8)")
        if name == "bench":
            p.add_argument("--sizes", dest="opt_sizes", help="comma list of scan sizes")
            p.add_argument("--bench-regions", dest="opt_bench_regions", help="comma list of AxB grids")
            p.add_argument("--methods", dest="opt_bench_methods",
                           help="comma list of conventional, localized, localized-parallel")
            p.add_argument("--repetitions", dest="opt_repetitions")
            p.add_argument("--parallel", dest="opt_parallel", action="store_const", const="true")
        for action in p._actions:
            if action.dest.startswith("opt_") and action.metavar is None and action.nargs != 0:
                action.metavar = action.dest[4:].upper()
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    for key in ("scan", "ply", "camera", "image"):
        if getattr(args, key, None) is not None:
            setattr(args, f"opt_{key}", getattr(args, key))
    man = Manifest(args.command, None, getattr(args, "opt_output_dir", None) or ".")
    code = EXIT_OK
    try:
        man.stage = "config"
        cfg = build_config(args)
        if args.command == "render" and not getattr(args, "opt_output_dir", None) and cfg.image:
            cfg.output_dir = os.path.dirname(os.path.abspath(cfg.image))
        man.cfg = cfg
        t0 = time.perf_counter()
        COMMANDS[args.command](cfg, man)
        man.status = "ok"
        log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    except FileNotFoundError as exc:
        code = EXIT_USAGE
        man.status, man.error = "failed", f"file not found: {exc.filename or exc.args[0]}"
    except DegenerateDataError as exc:
        code = EXIT_RUNTIME
        man.status, man.error = "failed", f"numerical failure: {exc}"
    except ConfigError as exc:
        code = EXIT_USAGE
        man.status, man.error = "failed", f"config error ({exc.key}): {exc}"
    except InvalidInputError as exc:
        code = EXIT_USAGE
        man.status, man.error = "failed", f"invalid input: {exc}"
    except Exception as exc:  # noqa: BLE001 - reported via manifest and exit code
        code = EXIT_RUNTIME
        man.status, man.error = "failed", f"{type(exc).__name__}: {exc}"
    if man.error:
        print(f"rfsplat {args.command}: error: {man.error}", file=sys.stderr)
    try:
        man.write()
    except OSError as exc:
        print(f"rfsplat: could not write manifest: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
