"""Synthetic radar scenes, accuracy metrics and runtime benchmarks.

Scenes are piecewise smooth: a low-frequency background surface with
rectangular "objects" pasted on top at clearly different depths. They
stand in for a multi-transmission ground-truth depth map.
"""

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .exceptions import InvalidInputError
from .geometry import AngularRange
from .gp import GpSettings, fit_gp
from .localized import RegionPartition, fit_localized
from .pointcloud import SparseDepthScan

__all__ = [
    "EvalReport",
    "Patch",
    "SyntheticScene",
    "benchmark",
    "evaluate_method",
    "evaluation_grid",
    "generate_scene",
    "run_comparison",
    "sample_scan",
    "write_reports_csv",
]

BASE_DEPTH_RANGE = (30.0, 50.0)
PATCH_NEAR = (5.0, 22.0)
PATCH_FAR = (58.0, 80.0)
MIN_BASE_LENGTHSCALE = math.radians(10.0)
_N_WAVES = 4


@dataclass(frozen=True)
class Patch:
    azimuth_min: float
    azimuth_max: float
    elevation_min: float
    elevation_max: float
    depth: float

    def contains(self, az, el):
        return (
            (az >= self.azimuth_min) & (az < self.azimuth_max)
            & (el >= self.elevation_min) & (el < self.elevation_max)
        )


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Ground-truth depth over ``domain``; ``depth(az, el)`` is vectorized."""

    domain: AngularRange
    seed: int
    noise_std: float
    base_level: float
    wave_amplitudes: np.ndarray
    wave_vectors: np.ndarray
    wave_phases: np.ndarray
    patches: tuple = ()

    def base_depth(self, az, el):
        az = np.asarray(az, dtype=float)
        el = np.asarray(el, dtype=float)
        out = np.full(np.broadcast(az, el).shape, self.base_level)
        for a, (wa, we), ph in zip(self.wave_amplitudes, self.wave_vectors, self.wave_phases):
            out = out + a * np.cos(wa * az + we * el + ph)
        return out

    def depth(self, az, el):
        az = np.asarray(az, dtype=float)
        el = np.asarray(el, dtype=float)
        out = self.base_depth(az, el)
        for p in self.patches:
            out = np.where(p.contains(az, el), p.depth, out)
        return out

    @property
    def curvature_bound(self):
        """Upper bound on |Laplacian| of the background surface."""
        return float(np.sum(np.abs(self.wave_amplitudes) * np.sum(self.wave_vectors**2, axis=1)))


def generate_scene(domain=None, n_patches=5, seed=0, noise_std=0.3):
    """Draw a piecewise-smooth depth scene.

    The background stays within 30-50 m and varies on angular scales of at
    least 10 degrees. Each patch sits either nearer (5-22 m) or farther
    (58-80 m) than any background value so its border is a real depth jump.
    """
    if n_patches < 0:
        raise InvalidInputError("n_patches must be >= 0")
    if noise_std < 0:
        raise InvalidInputError("noise_std must be >= 0")
    domain = domain or AngularRange.default()
    rng = np.random.default_rng(seed)
    mid = 0.5 * sum(BASE_DEPTH_RANGE)
    half = 0.5 * (BASE_DEPTH_RANGE[1] - BASE_DEPTH_RANGE[0])
    amps = rng.uniform(0.5, 1.0, _N_WAVES)
    amps *= half / amps.sum()
    max_freq = 1.0 / MIN_BASE_LENGTHSCALE
    freqs = rng.uniform(0.25, 1.0, _N_WAVES) * max_freq
    angles = rng.uniform(0.0, 2 * np.pi, _N_WAVES)
    vectors = np.column_stack([freqs * np.cos(angles), freqs * np.sin(angles)])
    phases = rng.uniform(0.0, 2 * np.pi, _N_WAVES)

    az_span = domain.azimuth_max - domain.azimuth_min
    el_span = domain.elevation_max - domain.elevation_min
    patches = []
    for _ in range(n_patches):
        w = rng.uniform(0.03, 0.12) * az_span
        h = rng.uniform(0.15, 0.4) * el_span
        a0 = rng.uniform(domain.azimuth_min, domain.azimuth_max - w)
        e0 = rng.uniform(domain.elevation_min, domain.elevation_max - h)
        lo, hi = PATCH_NEAR if rng.random() < 0.5 else PATCH_FAR
        patches.append(Patch(a0, a0 + w, e0, e0 + h, float(rng.uniform(lo, hi))))
    return SyntheticScene(
        domain, seed, float(noise_std), mid, amps, vectors, phases, tuple(patches)
    )


def sample_scan(scene, n_observations, seed=0):
    """Uniform random directions with truth depth plus Gaussian noise."""
    if n_observations < 1:
        raise InvalidInputError("n_observations must be >= 1")
    rng = np.random.default_rng(seed)
    d = scene.domain
    az = rng.uniform(d.azimuth_min, d.azimuth_max, n_observations)
    el = rng.uniform(d.elevation_min, d.elevation_max, n_observations)
    depth = scene.depth(az, el)
    if scene.noise_std > 0:
        depth = depth + rng.normal(0.0, scene.noise_std, n_observations)
    # Noise must not produce a non-physical range.
    depth = np.maximum(depth, 1e-3)
    return SparseDepthScan(az, el, depth, sensor="synthetic", timestamp=f"seed={seed}")


def evaluation_grid(domain, width=180, height=40):
    """Cell-center directions, row-major with row 0 at the top elevation."""
    az_edges = np.linspace(domain.azimuth_min, domain.azimuth_max, width + 1)
    el_edges = np.linspace(domain.elevation_max, domain.elevation_min, height + 1)
    az = 0.5 * (az_edges[:-1] + az_edges[1:])
    el = 0.5 * (el_edges[:-1] + el_edges[1:])
    A, E = np.meshgrid(az, el)
    return np.column_stack([A.ravel(), E.ravel()])


@dataclass
class EvalReport:
    method: str
    mae: float
    rmse: float
    fit_seconds: float = 0.0
    predict_seconds: float = 0.0
    mae_detected: float | None = None
    config: dict = field(default_factory=dict)


def evaluate_method(predictions, truth, method="", mask=None, **timing):
    """MAE and RMSE between aligned prediction and truth grids.

    ``mask`` selects a subset of cells (e.g. directions where the radar
    detected a return) for the additional ``mae_detected`` score.
    """
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise InvalidInputError(f"prediction grid {p.shape} does not match truth grid {t.shape}")
    if p.size == 0:
        raise InvalidInputError("empty evaluation grid")
    resid = p - t
    mae_detected = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != p.shape:
            raise InvalidInputError("mask does not match the grid")
        if mask.any():
            mae_detected = float(np.mean(np.abs(resid[mask])))
    return EvalReport(
        method=method,
        mae=float(np.mean(np.abs(resid))),
        rmse=float(np.sqrt(np.mean(resid * resid))),
        mae_detected=mae_detected,
        **timing,
    )


def _timed_fit_predict(method, X, y, queries, partition, settings, n_jobs):
    t0 = time.perf_counter()
    if method == "conventional":
        post = fit_gp(X, y, settings)
        t1 = time.perf_counter()
        mean, _ = post.predict(queries)
    else:
        model = fit_localized(X, y, partition, settings, n_jobs=n_jobs)
        t1 = time.perf_counter()
        mean = model.predict_batch(queries, n_jobs=n_jobs).mean
    t2 = time.perf_counter()
    return mean, t1 - t0, t2 - t1


def run_comparison(scene, scan, partition=None, settings=None, width=180, height=40,
                   n_jobs=None, detected=None):
    """Fit the global and localized GPs on ``scan`` and score both on a grid.

    ``detected`` optionally holds extra (n, 2) directions where a denser
    acquisition returned depth; they get a separate ``mae_detected`` score.
    """
    partition = partition or RegionPartition(scene.domain)
    settings = settings or GpSettings()
    grid = evaluation_grid(scene.domain, width, height)
    truth = scene.depth(grid[:, 0], grid[:, 1])
    config = {
        "seed": scene.seed,
        "noise_std": scene.noise_std,
        "n_patches": len(scene.patches),
        "n_observations": len(scan),
        "regions": f"{partition.n_azimuth_cells}x{partition.n_elevation_cells}",
        "grid": f"{width}x{height}",
    }
    reports = []
    for method in ("conventional", "localized"):
        mean, tf, tp = _timed_fit_predict(
            method, scan.locations, scan.depth, grid, partition, settings, n_jobs
        )
        rep = evaluate_method(mean, truth, method, fit_seconds=tf, predict_seconds=tp)
        if detected is not None and len(detected):
            if method == "conventional":
                det_mean = fit_gp(scan.locations, scan.depth, settings).predict(detected)[0]
            else:
                det_mean = fit_localized(
                    scan.locations, scan.depth, partition, settings
                ).predict_batch(detected).mean
            det_truth = scene.depth(detected[:, 0], detected[:, 1])
            rep.mae_detected = float(np.mean(np.abs(det_mean - det_truth)))
        rep.config = dict(config)
        reports.append(rep)
    return reports


def _balanced_scan(partition, n_observations, rng):
    """Equal observation counts in each region (remainder spread from region 0)."""
    R = partition.n_regions
    counts = np.full(R, n_observations // R)
    counts[: n_observations % R] += 1
    az_e, el_e = partition.azimuth_edges, partition.elevation_edges
    X = []
    for r, c in enumerate(counts):
        i_az, i_el = partition.cell(r)
        X.append(np.column_stack([
            rng.uniform(az_e[i_az], az_e[i_az + 1], c),
            rng.uniform(el_e[i_el], el_e[i_el + 1], c),
        ]))
    return np.vstack(X)


BENCH_METHODS = ("conventional", "localized", "localized-parallel")


def benchmark(sizes, partitions, repetitions=3, seed=0, n_queries=(180, 40),
              settings=None, parallel=False, domain=None, methods=None):
    """Median fit+predict wall-clock times of the global and localized GPs.

    BLAS is pinned to one thread so the comparison reflects algorithmic cost.
    With ``parallel`` the localized model fits and predicts regions on a
    thread pool; those rows are labelled ``localized-parallel``. ``methods``
    restricts the run to a subset of labels; the speedup column is left
    empty when the conventional GP is not among them.
    """
    if repetitions < 3:
        raise InvalidInputError("repetitions must be >= 3")
    if methods is None:
        methods = ["conventional", "localized"] + (["localized-parallel"] if parallel else [])
    methods = list(methods)
    unknown = [m for m in methods if m not in BENCH_METHODS]
    if unknown or not methods:
        raise InvalidInputError(f"unknown benchmark methods {unknown}; choose from {BENCH_METHODS}")
    domain = domain or AngularRange.default()
    settings = settings or GpSettings()
    grid = evaluation_grid(domain, *n_queries)
    scene = generate_scene(domain, n_patches=5, seed=seed, noise_std=0.3)
    rows = []
    with threadpool_limits(limits=1):
        for T in sizes:
            for dims in partitions:
                part = RegionPartition(domain, *dims)
                rng = np.random.default_rng([seed, T, *dims])
                X = _balanced_scan(part, T, rng)
                y = scene.depth(X[:, 0], X[:, 1]) + rng.normal(0.0, 0.3, T)
                timings = {}
                for label in methods:
                    jobs = -1 if label == "localized-parallel" else None
                    runs = []
                    for _ in range(repetitions):
                        _, tf, tp = _timed_fit_predict(
                            label.split("-")[0], X, y, grid, part, settings, jobs
                        )
                        runs.append(tf + tp)
                    timings[label] = float(np.median(runs))
                base = timings.get("conventional")
                for label in methods:
                    rows.append({
                        "method": label,
                        "n_observations": T,
                        "regions": f"{dims[0]}x{dims[1]}",
                        "n_queries": len(grid),
                        "repetitions": repetitions,
                        "median_seconds": timings[label],
                        "speedup_vs_conventional": None if base is None else base / timings[label],
                        "seed": seed,
                    })
    return rows


def write_reports_csv(rows, sink=None):
    """Write dict rows (or EvalReports) as CSV; returns the text."""
    rows = [_flatten(asdict(r)) if isinstance(r, EvalReport) else dict(r) for r in rows]
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(v) for k, v in r.items()})
    text = buf.getvalue()
    if sink is not None:
        sink.write(text)
    return text


def _flatten(d):
    out = {k: v for k, v in d.items() if k != "config"}
    out.update({f"config_{k}": v for k, v in d.get("config", {}).items()})
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v
