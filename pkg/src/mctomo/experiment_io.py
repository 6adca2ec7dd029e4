"""Persistence and analysis: rasters, manifests, convergence logs, fits.

File formats (all locale independent, lossless where it matters):

* ``.f64`` raster: the ASCII magic line ``MCIR-F64 1``, an ASCII
  ``rows cols`` line, then ``rows*cols`` little-endian 64-bit floats
  row-major.  Bitwise round-trip.
* ``.pgm`` viewable export: 16-bit binary PGM (``P5``, maxval 65535,
  big-endian samples), mapping ``[min, max]`` affinely to
  ``[0, 65535]``.
* ``.json`` manifests: structured provenance (geometry, gates, motion
  parameters, sigma, seeds, norm estimates), human diffable.
* ``.csv`` convergence logs with the header
  ``epoch,dist_sq,objective,rmse_to_truth,fwd_calls,adj_calls`` and
  floats printed with 17 significant digits so they round-trip.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .motion import MotionParams
from .projector import Geometry

__all__ = [
    "RASTER_MAGIC",
    "CSV_HEADER",
    "RasterFormatError",
    "write_raster",
    "read_raster",
    "write_pgm16",
    "write_manifest",
    "read_manifest",
    "geometry_to_dict",
    "geometry_from_dict",
    "ConvergenceRecord",
    "RateFit",
    "fit_rate",
    "rmse",
    "save_dataset",
    "load_dataset",
    "save_saddle",
    "load_saddle",
]

RASTER_MAGIC = "MCIR-F64 1"
CSV_HEADER = "epoch,dist_sq,objective,rmse_to_truth,fwd_calls,adj_calls"


class RasterFormatError(ValueError):
    """Raised when a raster file violates the format, with byte offset."""


def write_raster(path: str | os.PathLike, values: np.ndarray) -> None:
    """Write a 2D float64 array in the ``.f64`` raster format."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("raster arrays are 2D")
    with open(path, "wb") as fh:
        fh.write(f"{RASTER_MAGIC}\n".encode("ascii"))
        fh.write(f"{values.shape[0]} {values.shape[1]}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_raster(path: str | os.PathLike) -> np.ndarray:
    """Read a ``.f64`` raster; bitwise inverse of :func:`write_raster`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic = f"{RASTER_MAGIC}\n".encode("ascii")
    if not blob.startswith(magic):
        raise RasterFormatError(f"{path}: bad magic at byte 0")
    offset = len(magic)
    newline = blob.find(b"\n", offset)
    if newline < 0:
        raise RasterFormatError(f"{path}: missing shape line at byte {offset}")
    try:
        rows_s, cols_s = blob[offset:newline].split()
        rows, cols = int(rows_s), int(cols_s)
    except ValueError as exc:
        raise RasterFormatError(f"{path}: bad shape line at byte {offset}") from exc
    if rows < 1 or cols < 1:
        raise RasterFormatError(f"{path}: bad shape line at byte {offset}")
    start = newline + 1
    expected = rows * cols * 8
    if len(blob) - start != expected:
        raise RasterFormatError(
            f"{path}: expected {expected} payload bytes at byte {start}, "
            f"found {len(blob) - start}"
        )
    data = np.frombuffer(blob[start:], dtype="<f8")
    return data.reshape(rows, cols).astype(np.float64, copy=True)


def write_pgm16(path: str | os.PathLike, values: np.ndarray) -> None:
    """Write a 16-bit PGM mapping [min, max] affinely onto [0, 65535].

    A constant image maps to 0.  Lossy by design; use rasters for data.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("PGM export needs a 2D array")
    lo = float(values.min())
    hi = float(values.max())
    span = hi - lo
    if span > 0:
        scaled = np.rint((values - lo) / span * 65535.0)
    else:
        scaled = np.zeros_like(values)
    pixels = scaled.astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{values.shape[1]} {values.shape[0]}\n65535\n".encode("ascii"))
        fh.write(pixels.tobytes())


def write_manifest(path: str | os.PathLike, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path: str | os.PathLike) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def geometry_to_dict(geom: Geometry) -> dict:
    return {
        "rows": geom.rows,
        "cols": geom.cols,
        "num_angles": geom.num_angles,
        "num_bins": geom.num_bins,
        "detector_spacing": geom.detector_spacing,
    }


def geometry_from_dict(payload: dict) -> Geometry:
    return Geometry(
        rows=int(payload["rows"]),
        cols=int(payload["cols"]),
        num_angles=int(payload["num_angles"]),
        num_bins=int(payload["num_bins"]),
        detector_spacing=float(payload["detector_spacing"]),
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class ConvergenceRecord:
    """Per-epoch trajectory of a solver run.

    ``dist_sq`` is the squared distance of ``(x, y)`` to the saddle
    point (NaN when no reference was supplied), ``objective`` the full
    objective at the epoch's iterate, ``rmse_to_truth`` the image-space
    error against the ground truth (NaN when unknown), and the two call
    counters accumulate the gated forward/adjoint applications inside
    the solver.  Epochs must increase strictly and counters must never
    decrease.
    """

    epochs: list[float] = field(default_factory=list)
    dist_sq: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    rmse_to_truth: list[float] = field(default_factory=list)
    fwd_calls: list[int] = field(default_factory=list)
    adj_calls: list[int] = field(default_factory=list)

    def append(self, epoch, dist_sq, objective, rmse_to_truth, fwd_calls, adj_calls):
        if self.epochs and not epoch > self.epochs[-1]:
            raise ValueError("epochs must be strictly increasing")
        if self.fwd_calls and (
            fwd_calls < self.fwd_calls[-1] or adj_calls < self.adj_calls[-1]
        ):
            raise ValueError("call counters must be non-decreasing")
        self.epochs.append(float(epoch))
        self.dist_sq.append(float(dist_sq))
        self.objective.append(float(objective))
        self.rmse_to_truth.append(float(rmse_to_truth))
        self.fwd_calls.append(int(fwd_calls))
        self.adj_calls.append(int(adj_calls))

    def __len__(self) -> int:
        return len(self.epochs)

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(CSV_HEADER + "\n")
            for k in range(len(self.epochs)):
                fh.write(
                    ",".join(
                        (
                            _fmt(self.epochs[k]),
                            _fmt(self.dist_sq[k]),
                            _fmt(self.objective[k]),
                            _fmt(self.rmse_to_truth[k]),
                            str(self.fwd_calls[k]),
                            str(self.adj_calls[k]),
                        )
                    )
                    + "\n"
                )

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "ConvergenceRecord":
        record = cls()
        with open(path, "r", encoding="ascii") as fh:
            header = fh.readline().strip()
            if header != CSV_HEADER:
                raise ValueError(f"{path}: unexpected CSV header {header!r}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 6:
                    raise ValueError(f"{path}: malformed row {line!r}")
                record.append(
                    float(parts[0]),
                    float(parts[1]),
                    float(parts[2]),
                    float(parts[3]),
                    int(parts[4]),
                    int(parts[5]),
                )
        return record


@dataclass(frozen=True)
class RateFit:
    """Least-squares line through (epoch, log dist_sq).

    ``rate`` is ``exp(slope)``, the fitted per-epoch contraction;
    ``log_intercept`` the fitted log offset; ``r_squared`` in [0, 1]
    the goodness of fit; ``epoch_window`` the inclusive window used.
    """

    rate: float
    log_intercept: float
    r_squared: float
    epoch_window: tuple[float, float]


def fit_rate(
    record: ConvergenceRecord,
    window: tuple[float, float | None] = (5.0, None),
) -> RateFit:
    """Fit a geometric decay rate to the logged squared distances.

    The default window starts at epoch 5 to skip the initialization
    transient.  Requires at least 5 rows inside the window and strictly
    positive distances (the log of a zero or negative distance is
    undefined; runs that bottom out at the reference cannot be fitted).
    """
    first, last = window
    if last is None:
        last = math.inf
    epochs = np.asarray(record.epochs)
    dist = np.asarray(record.dist_sq)
    mask = (epochs >= first) & (epochs <= last)
    if int(mask.sum()) < 5:
        raise ValueError("need at least 5 rows inside the fit window")
    epochs = epochs[mask]
    dist = dist[mask]
    if not np.all(dist > 0):
        raise ValueError("dist_sq must be positive throughout the fit window")
    logs = np.log(dist)
    slope, intercept = np.polyfit(epochs, logs, 1)
    predicted = slope * epochs + intercept
    ss_res = float(np.sum((logs - predicted) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    # roundoff floor: sums of squares below this are indistinguishable
    # from exact zero at double precision
    tiny = len(logs) * (1e-12 * (1.0 + float(np.abs(logs).max()))) ** 2
    if ss_tot > tiny:
        r_squared = max(0.0, 1.0 - ss_res / ss_tot)
    else:
        # constant input: the flat line is a perfect fit
        r_squared = 1.0 if ss_res <= tiny else 0.0
    return RateFit(
        rate=float(np.exp(slope)),
        log_intercept=float(intercept),
        r_squared=min(1.0, r_squared),
        epoch_window=(float(epochs[0]), float(epochs[-1])),
    )


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    """Root-mean-square difference between two same-shape arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sqrt(np.mean(diff * diff)))


def save_dataset(dataset, directory: str | os.PathLike, norms: dict | None = None) -> None:
    """Persist a :class:`~mctomo.simulate.GatedDataset` to a directory.

    Writes ``truth.f64``, one ``gate_###.f64`` per sinogram, and a
    ``manifest.json`` holding geometry, motion, sigma, and seeds.  The
    optional ``norms`` dict (power-iteration estimates) is stored
    verbatim so downstream commands can reuse it.
    """
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    write_raster(os.path.join(directory, "truth.f64"), dataset.truth)
    gates = []
    for k, (params, sino) in enumerate(zip(dataset.motion, dataset.sinograms)):
        name = f"gate_{k:03d}.f64"
        write_raster(os.path.join(directory, name), sino)
        gates.append({"index": k, "motion": params.to_dict(), "sinogram": name})
    manifest = {
        "format": "gated-dataset",
        "version": 1,
        "geometry": geometry_to_dict(dataset.geometry),
        "num_gates": dataset.num_gates,
        "sigma": dataset.sigma,
        "master_seed": dataset.master_seed,
        "phantom_kind": dataset.phantom_kind,
        "magnitude": dataset.magnitude,
        "truth": "truth.f64",
        "gates": gates,
    }
    if norms is not None:
        manifest["norms"] = norms
    write_manifest(os.path.join(directory, "manifest.json"), manifest)


def load_dataset(directory: str | os.PathLike):
    """Load a dataset directory written by :func:`save_dataset`."""
    from .simulate import GatedDataset  # local import to avoid a cycle

    directory = os.fspath(directory)
    manifest = read_manifest(os.path.join(directory, "manifest.json"))
    if manifest.get("format") != "gated-dataset":
        raise ValueError(f"{directory}: not a gated dataset manifest")
    geom = geometry_from_dict(manifest["geometry"])
    motion = []
    sinograms = []
    for gate in manifest["gates"]:
        motion.append(MotionParams.from_dict(gate["motion"]))
        sinograms.append(read_raster(os.path.join(directory, gate["sinogram"])))
    dataset = GatedDataset(
        geometry=geom,
        truth=read_raster(os.path.join(directory, manifest["truth"])),
        motion=motion,
        sinograms=sinograms,
        sigma=float(manifest["sigma"]),
        master_seed=int(manifest["master_seed"]),
        phantom_kind=manifest.get("phantom_kind"),
        magnitude=manifest.get("magnitude"),
    )
    return dataset, manifest


def save_saddle(directory: str | os.PathLike, saddle, meta: dict | None = None) -> None:
    """Persist a saddle point (x_star plus all dual blocks)."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    write_raster(os.path.join(directory, "x_star.f64"), saddle.x_star)
    names = []
    for k, y in enumerate(saddle.y_star):
        name = f"y_star_{k:03d}.f64"
        write_raster(os.path.join(directory, name), y)
        names.append(name)
    payload = {
        "format": "saddle-point",
        "version": 1,
        "source": saddle.source,
        "converged": saddle.converged,
        "residual": saddle.residual,
        "x_star": "x_star.f64",
        "y_star": names,
    }
    if meta:
        payload["meta"] = meta
    write_manifest(os.path.join(directory, "manifest.json"), payload)


def load_saddle(directory: str | os.PathLike):
    """Load a saddle point saved by :func:`save_saddle`."""
    from .solvers import SaddlePoint  # local import to avoid a cycle

    directory = os.fspath(directory)
    manifest = read_manifest(os.path.join(directory, "manifest.json"))
    if manifest.get("format") != "saddle-point":
        raise ValueError(f"{directory}: not a saddle point manifest")
    x_star = read_raster(os.path.join(directory, manifest["x_star"]))
    y_star = [read_raster(os.path.join(directory, n)) for n in manifest["y_star"]]
    return SaddlePoint(
        x_star=x_star,
        y_star=y_star,
        source=manifest["source"],
        converged=bool(manifest["converged"]),
        residual=float(manifest["residual"]),
    )
