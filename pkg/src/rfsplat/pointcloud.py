"""Sparse scans in, confidence-filtered point clouds and depth rasters out.

Files carry angles in degrees; everything in memory is radians.
"""

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive_depths
from .exceptions import EmptyCloudWarning, InvalidInputError, ParseError
from .geometry import AngularRange, spherical_to_cartesian

__all__ = [
    "DepthSample",
    "PointCloud",
    "PointCloudBuild",
    "SparseDepthScan",
    "build_point_cloud",
    "export_scan",
    "import_scan",
    "rasterize_depth_field",
    "read_raster_csv",
    "sample_query_locations",
    "write_raster_csv",
]

SCAN_HEADER = ("azimuth_deg", "elevation_deg", "depth_m")
DEFAULT_COLOR = (128, 128, 128)
DEFAULT_QUANTILE = 0.7
DEFAULT_QUERIES = 20000


@dataclass(frozen=True, eq=False)
class SparseDepthScan:
    """Depth returns of one radar transmission."""

    azimuth: np.ndarray
    elevation: np.ndarray
    depth: np.ndarray
    sensor: str = ""
    timestamp: str = ""

    def __post_init__(self):
        az = np.asarray(self.azimuth, dtype=float).ravel()
        el = np.asarray(self.elevation, dtype=float).ravel()
        d = np.asarray(self.depth, dtype=float).ravel()
        if not az.shape == el.shape == d.shape:
            raise InvalidInputError("azimuth, elevation and depth must have equal length")
        if not (np.all(np.isfinite(az)) and np.all(np.isfinite(el))):
            raise InvalidInputError("scan angles must be finite")
        check_positive_depths(d)
        object.__setattr__(self, "azimuth", az)
        object.__setattr__(self, "elevation", el)
        object.__setattr__(self, "depth", d)

    def __len__(self):
        return self.depth.shape[0]

    @property
    def locations(self):
        return np.column_stack([self.azimuth, self.elevation])


@dataclass(frozen=True)
class DepthSample:
    location: tuple
    mean: float
    variance: float
    region: int
    from_empty_region: bool


@dataclass(eq=False)
class PointCloud:
    """xyz in meters, colors uint8 RGB, confidence in [0, 1]."""

    points: np.ndarray
    colors: np.ndarray = None
    confidence: np.ndarray = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = self.points.shape[0]
        if not np.all(np.isfinite(self.points)):
            raise InvalidInputError("point coordinates must be finite")
        if self.colors is None:
            self.colors = np.tile(np.array(DEFAULT_COLOR, dtype=np.uint8), (n, 1))
        else:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(n, 3)
        if self.confidence is None:
            self.confidence = np.ones(n)
        else:
            self.confidence = np.asarray(self.confidence, dtype=float).reshape(n)

    def __len__(self):
        return self.points.shape[0]


@dataclass
class PointCloudBuild:
    """A filtered cloud plus the bookkeeping of how it was filtered."""

    cloud: PointCloud
    samples: list = field(repr=False)
    threshold: float
    quantile: float
    n_queries: int
    n_retained: int
    n_dropped_variance: int
    n_dropped_empty: int
    warning: str | None = None


# -- scan I/O ---------------------------------------------------------------

def _degrees_exact(radians):
    """Degrees whose float parse maps back to exactly ``radians``."""
    deg = np.rad2deg(radians)
    bad = np.flatnonzero(np.deg2rad(deg) != radians)
    for i in bad:
        for direction in (np.inf, -np.inf):
            cand = deg[i]
            for _ in range(4):
                cand = np.nextafter(cand, direction)
                if np.deg2rad(cand) == radians[i]:
                    deg[i] = cand
                    break
            else:
                continue
            break
    return deg


def import_scan(source, fmt="csv"):
    """Parse a scan from a text/binary stream, path-free.

    CSV needs the header ``azimuth_deg,elevation_deg,depth_m``; JSON is an
    array of objects with those keys and optional ``sensor``/``timestamp``.
    """
    text = source.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if fmt == "csv":
        rows, sensor, stamp = _parse_scan_csv(text), "", ""
    elif fmt == "json":
        rows, sensor, stamp = _parse_scan_json(text)
    else:
        raise InvalidInputError(f"unknown scan format {fmt!r}")
    if not rows:
        raise InvalidInputError("scan contains no records")
    arr = np.array(rows, dtype=float)
    bad = np.flatnonzero(~np.isfinite(arr[:, 2]) | (arr[:, 2] <= 0))
    if bad.size:
        raise InvalidInputError(f"record {bad[0] + 1} has non-positive depth {arr[bad[0], 2]!r}")
    return SparseDepthScan(np.deg2rad(arr[:, 0]), np.deg2rad(arr[:, 1]), arr[:, 2], sensor, stamp)


def _parse_scan_csv(text):
    reader = csv.reader(io.StringIO(text))
    rows = []
    header_seen = False
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if not header_seen:
            if tuple(c.strip() for c in row) != SCAN_HEADER:
                raise ParseError(
                    f"line {lineno}: expected header {','.join(SCAN_HEADER)}", line=lineno
                )
            header_seen = True
            continue
        if len(row) != 3:
            raise ParseError(f"line {lineno}: expected 3 fields, got {len(row)}", line=lineno)
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}", line=lineno) from exc
        if not all(np.isfinite(vals)):
            raise ParseError(f"line {lineno}: non-finite value", line=lineno)
        rows.append(vals)
    return rows


def _parse_scan_json(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(data, list):
        raise ParseError("scan JSON must be an array of records", line=1)
    rows, sensor, stamp = [], "", ""
    for i, rec in enumerate(data):
        try:
            rows.append([float(rec[k]) for k in SCAN_HEADER])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"record {i}: {exc!r}", line=i + 1) from exc
        sensor = sensor or str(rec.get("sensor", ""))
        stamp = stamp or str(rec.get("timestamp", ""))
    return rows, sensor, stamp


def export_scan(scan, sink, fmt="csv"):
    """Write ``scan`` in degrees for :func:`import_scan`.

    Any scan that was itself read from a file restores bit-identical
    radians. Not every float radian has an exact degree preimage; those
    land within one ulp and are stable from then on.
    """
    az = _degrees_exact(scan.azimuth)
    el = _degrees_exact(scan.elevation)
    if fmt == "csv":
        lines = [",".join(SCAN_HEADER)]
        lines += [f"{a!r},{e!r},{d!r}" for a, e, d in zip(az.tolist(), el.tolist(), scan.depth.tolist())]
        sink.write("\n".join(lines) + "\n")
    elif fmt == "json":
        recs = []
        for a, e, d in zip(az.tolist(), el.tolist(), scan.depth.tolist()):
            rec = dict(zip(SCAN_HEADER, (a, e, d)))
            if scan.sensor:
                rec["sensor"] = scan.sensor
            if scan.timestamp:
                rec["timestamp"] = scan.timestamp
            recs.append(rec)
        sink.write(json.dumps(recs, indent=1) + "\n")
    else:
        raise InvalidInputError(f"unknown scan format {fmt!r}")


# -- query sampling and filtering ------------------------------------------

def sample_query_locations(angular_range, count=DEFAULT_QUERIES, seed=0):
    """``count`` i.i.d. uniform directions over the rectangle."""
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    rng = np.random.default_rng(seed)
    az = rng.uniform(angular_range.azimuth_min, angular_range.azimuth_max, count)
    el = rng.uniform(angular_range.elevation_min, angular_range.elevation_max, count)
    return np.column_stack([az, el])


def variance_threshold(variances, quantile):
    """Lower empirical quantile: the ceil(q*n)-th smallest variance."""
    v = np.sort(np.asarray(variances, dtype=float))
    k = max(int(np.ceil(quantile * v.size)), 1)
    return float(v[k - 1])


def build_point_cloud(model, queries, quantile=DEFAULT_QUANTILE, n_jobs=None, color=DEFAULT_COLOR):
    """Predict every query and keep the confident ones as 3D points.

    Samples from empty regions are always dropped. Among the rest, samples
    whose variance is at most the ``quantile`` quantile of their variances
    are kept. Confidence is ``exp(-variance / signal_variance)`` with the
    signal variance of the region that produced the sample.
    """
    if not 0 < quantile <= 1:
        raise InvalidInputError("quantile must lie in (0, 1]")
    queries = np.asarray(queries, dtype=float).reshape(-1, 2)
    pred = model.predict_batch(queries, n_jobs=n_jobs)
    samples = [
        DepthSample((float(a), float(e)), float(m), float(v), int(r), bool(f))
        for (a, e), m, v, r, f in zip(queries, pred.mean, pred.variance, pred.region, pred.empty_region)
    ]
    candidates = ~pred.empty_region
    threshold = float("nan")
    keep = np.zeros(len(queries), dtype=bool)
    if candidates.any():
        threshold = variance_threshold(pred.variance[candidates], quantile)
        keep = candidates & (pred.variance <= threshold) & (pred.mean > 0)
    idx = np.flatnonzero(keep)
    if idx.size:
        pts = spherical_to_cartesian(queries[idx, 0], queries[idx, 1], pred.mean[idx])
        sf2 = np.array([model.posteriors[r].kernel.signal_variance for r in pred.region[idx]])
        conf = np.exp(-pred.variance[idx] / sf2)
    else:
        pts, conf = np.zeros((0, 3)), np.zeros(0)
    message = None
    if idx.size == 0:
        message = "variance filtering removed every sample; point cloud is empty"
        warnings.warn(message, EmptyCloudWarning, stacklevel=2)
    cloud = PointCloud(pts, np.tile(np.array(color, dtype=np.uint8), (idx.size, 1)), conf)
    n_empty = int(np.count_nonzero(~candidates))
    return PointCloudBuild(
        cloud=cloud,
        samples=samples,
        threshold=threshold,
        quantile=float(quantile),
        n_queries=len(queries),
        n_retained=int(idx.size),
        n_dropped_variance=len(queries) - n_empty - int(idx.size),
        n_dropped_empty=n_empty,
        warning=message,
    )


# -- rasters -----------------------------------------------------------------

def raster_centers(angular_range, width, height):
    """Cell-center directions; row 0 is the highest elevation."""
    if width < 1 or height < 1:
        raise InvalidInputError("raster width and height must be >= 1")
    r = angular_range
    az = r.azimuth_min + (np.arange(width) + 0.5) * ((r.azimuth_max - r.azimuth_min) / width)
    el = r.elevation_max - (np.arange(height) + 0.5) * ((r.elevation_max - r.elevation_min) / height)
    A, E = np.meshgrid(az, el)
    return np.column_stack([A.ravel(), E.ravel()])


def rasterize_depth_field(model, angular_range, width, height, n_jobs=None):
    """Mean and variance grids of shape (height, width) at cell centers."""
    centers = raster_centers(angular_range, width, height)
    pred = model.predict_batch(centers, n_jobs=n_jobs)
    return pred.mean.reshape(height, width), pred.variance.reshape(height, width)


def write_raster_csv(grid, angular_range, sink):
    """First line: width,height,az_min_deg,az_max_deg,el_min_deg,el_max_deg."""
    grid = np.asarray(grid, dtype=float)
    h, w = grid.shape
    head = [str(w), str(h)] + [repr(v) for v in angular_range.to_degrees()]
    lines = [",".join(head)]
    lines += [",".join(repr(v) for v in row) for row in grid.tolist()]
    sink.write("\n".join(lines) + "\n")


def read_raster_csv(source):
    text = source.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty raster", line=1)
    try:
        head = lines[0].split(",")
        w, h = int(head[0]), int(head[1])
        rng = AngularRange.from_degrees(*(float(v) for v in head[2:6]))
    except (ValueError, IndexError) as exc:
        raise ParseError(f"line 1: bad raster header ({exc})", line=1) from exc
    if len(lines) - 1 != h:
        raise ParseError(f"expected {h} raster rows, got {len(lines) - 1}", line=len(lines))
    grid = np.empty((h, w))
    for i, ln in enumerate(lines[1:]):
        vals = ln.split(",")
        if len(vals) != w:
            raise ParseError(f"line {i + 2}: expected {w} values", line=i + 2)
        try:
            grid[i] = [float(v) for v in vals]
        except ValueError as exc:
            raise ParseError(f"line {i + 2}: {exc}", line=i + 2) from exc
    return grid, rng
