"""(N, eta) parameter sweeps of the photon number and linewidth.

Cells are pure functions of (grid, base params, index), evaluated by a
process pool and gathered into a pre-indexed grid, so neither worker count
nor completion order can change the output.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import BudgetError, NumericalError, SRLaserError, ValidationError
from .export import content_hash, sanitize
from .meanfield import is_stable, steady_state
from .model import TWO_PI, PhysicalParams, derive
from .spectrum import SpectrumOptions, linewidth

OK = "ok"
UNSTABLE = "unstable"
NO_CONVERGENCE = "no-convergence"
FIT_FAILED = "fit-failed"
FIT_SKIPPED = "fit-skipped"
STATUSES = (OK, UNSTABLE, NO_CONVERGENCE, FIT_FAILED, FIT_SKIPPED)
DIM_PHOTON = 1e-6  # below this the line is not fitted

WORKERS_ENV = "SRLASER_WORKERS"


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ValidationError(f"{WORKERS_ENV} must be >= 1")
        return n
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def axis(count: int, lo: float, hi: float, spacing: str = "log") -> np.ndarray:
    if count < 1:
        raise ValidationError("axis needs at least one point")
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo or (count > 1 and hi == lo):
        raise ValidationError(f"axis bounds must satisfy min < max (got {lo}, {hi})")
    if spacing == "log":
        if lo <= 0:
            raise ValidationError("log axis needs positive bounds")
        return np.logspace(math.log10(lo), math.log10(hi), count) if count > 1 else np.array([float(lo)])
    if spacing == "linear":
        return np.linspace(lo, hi, count) if count > 1 else np.array([float(lo)])
    raise ValidationError(f"unknown spacing {spacing!r}")


@dataclass(frozen=True)
class GridSpec:
    n_count: int
    n_min: float
    n_max: float
    eta_count: int
    eta_min_hz: float
    eta_max_hz: float
    spacing: str = "log"
    max_cells: int = 10_000
    cell_timeout: float = 30.0  # s

    def __post_init__(self):
        self.n_axis()
        self.eta_axis_hz()
        if self.cell_timeout <= 0:
            raise ValidationError("cell_timeout must be positive")

    def n_axis(self) -> np.ndarray:
        return axis(self.n_count, self.n_min, self.n_max, self.spacing)

    def eta_axis_hz(self) -> np.ndarray:
        return axis(self.eta_count, self.eta_min_hz, self.eta_max_hz, self.spacing)

    @property
    def size(self) -> int:
        return self.n_count * self.eta_count

    def check_budget(self) -> None:
        if self.size > self.max_cells:
            raise BudgetError(f"grid has {self.size} cells, budget is {self.max_cells}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_axes(cls, n_values, eta_values_hz, **kw) -> "GridSpec":
        """Explicit two-point-or-more axes given by their end points."""
        n_values, eta_values_hz = np.asarray(n_values, float), np.asarray(eta_values_hz, float)
        return cls(len(n_values), float(n_values[0]), float(n_values[-1]), len(eta_values_hz), float(eta_values_hz[0]), float(eta_values_hz[-1]), **kw)


@dataclass(frozen=True)
class Cell:
    i_eta: int
    i_n: int
    n_atoms: float
    eta_hz: float
    status: str
    n_photon: float | None = None
    inversion: float | None = None
    fwhm_hz: float | None = None
    predicted_fwhm_hz: float | None = None
    fit_rms: float | None = None
    message: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Cell":
        return cls(**d)


@dataclass(frozen=True)
class OverlayCurves:
    n_values: np.ndarray
    max_pump_hz: np.ndarray  # eta = N C1 gamma, in Hz
    n_crit: float | None  # None when the line is absent (chi = 0)
    c1: float

    def to_dict(self) -> dict:
        return {"n_values": self.n_values, "max_pump_Hz": self.max_pump_hz, "n_crit": self.n_crit, "C1": self.c1}


@dataclass
class SweepGrid:
    spec: GridSpec
    base: PhysicalParams
    kind: str  # "photon" or "linewidth"
    cells: list[Cell] = field(default_factory=list)  # row-major over (eta, N)
    overlays: OverlayCurves | None = None

    @property
    def n_axis(self) -> np.ndarray:
        return self.spec.n_axis()

    @property
    def eta_axis_hz(self) -> np.ndarray:
        return self.spec.eta_axis_hz()

    def cell(self, i_eta: int, i_n: int) -> Cell:
        return self.cells[i_eta * self.spec.n_count + i_n]

    def matrix(self, name: str) -> np.ndarray:
        """(eta, N) array of a numeric cell field; NaN where absent."""
        out = np.full((self.spec.eta_count, self.spec.n_count), np.nan)
        for c in self.cells:
            v = getattr(c, name)
            if v is not None:
                out[c.i_eta, c.i_n] = v
        return out

    def status_matrix(self) -> np.ndarray:
        out = np.empty((self.spec.eta_count, self.spec.n_count), dtype=object)
        for c in self.cells:
            out[c.i_eta, c.i_n] = c.status
        return out

    def status_counts(self) -> dict[str, int]:
        counts = {s: 0 for s in STATUSES}
        for c in self.cells:
            counts[c.status] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "grid": self.spec.to_dict(),
            "base_params_Hz": self.base.to_hz_dict(),
            "n_axis": self.n_axis,
            "eta_axis_Hz": self.eta_axis_hz,
            "status_counts": self.status_counts(),
            "overlays": self.overlays.to_dict() if self.overlays else None,
            "cells": [c.to_dict() for c in self.cells],
        }

    def digest(self) -> str:
        return content_hash(self.to_dict())


def overlays(base_params: PhysicalParams, grid_spec: GridSpec) -> OverlayCurves:
    d = derive(base_params)
    n_vals = grid_spec.n_axis()
    line = n_vals * d.c1 * base_params.gamma / TWO_PI
    n_crit = d.n_crit if (math.isfinite(d.n_crit) and d.n_crit > 0) else None
    return OverlayCurves(n_vals, line, n_crit, d.c1)


# --- cells ----------------------------------------------------------------------


def cell_params(base: PhysicalParams, spec: GridSpec, i_eta: int, i_n: int) -> PhysicalParams:
    return base.replace(n_atoms=float(spec.n_axis()[i_n]), eta=float(spec.eta_axis_hz()[i_eta]) * TWO_PI)


def compute_cell(kind: str, base: PhysicalParams, spec: GridSpec, i_eta: int, i_n: int, spec_opts: SpectrumOptions | None = None) -> Cell:
    """One grid cell; a pure function of its arguments (apart from the timeout)."""
    p = cell_params(base, spec, i_eta, i_n)
    meta = dict(i_eta=i_eta, i_n=i_n, n_atoms=p.n_atoms, eta_hz=float(spec.eta_axis_hz()[i_eta]))
    deadline = time.monotonic() + spec.cell_timeout
    try:
        ss = steady_state(p, deadline=deadline)
    except SRLaserError as exc:
        return Cell(status=NO_CONVERGENCE, message=str(exc), **meta)
    stable = is_stable(ss, p)
    base_cell = dict(n_photon=ss.n_photon, inversion=ss.inversion, **meta)
    if kind == "photon":
        return Cell(status=OK if stable else UNSTABLE, message="" if stable else "fixed point linearly unstable", **base_cell)
    if not stable:
        return Cell(status=UNSTABLE, message="fixed point linearly unstable; no stationary spectrum", **base_cell)
    if ss.n_photon < DIM_PHOTON and not (p.g == 0 and ss.n_photon == 0):
        return Cell(status=FIT_SKIPPED, message=f"photon number below {DIM_PHOTON:g}", **base_cell)
    try:
        res = linewidth(p, spec_opts=spec_opts, steady=ss)
    except SRLaserError as exc:
        return Cell(status=FIT_FAILED, message=f"{type(exc).__name__}: {exc}", **base_cell)
    return Cell(status=OK, fwhm_hz=res.fwhm, predicted_fwhm_hz=res.predicted_fwhm, fit_rms=res.fit.rms_residual, **base_cell)


def _run_chunk(args):
    kind, base, spec, spec_opts, idx = args
    return [compute_cell(kind, base, spec, i, j, spec_opts) for i, j in idx]


# --- checkpoints ----------------------------------------------------------------


def _run_key(kind, base, spec, spec_opts) -> str:
    return content_hash({"kind": kind, "base": base.to_dict(), "grid": spec.to_dict(), "spectrum": asdict(spec_opts) if spec_opts else None})


def _load_checkpoint(path: Path, key: str) -> dict[tuple[int, int], Cell]:
    done: dict[tuple[int, int], Cell] = {}
    if not path.exists():
        return done
    with path.open() as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0]:
        return done
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        return done
    if header.get("run_key") != key:
        raise ValidationError(f"checkpoint {path} belongs to a different sweep configuration")
    for ln in lines[1:]:
        if not ln:
            continue
        try:
            c = Cell.from_dict(json.loads(ln))
        except (json.JSONDecodeError, TypeError):
            continue  # truncated trailing line from an interrupted run
        done[(c.i_eta, c.i_n)] = c
    return done


def run_sweep(
    kind: str,
    grid_spec: GridSpec,
    base_params: PhysicalParams,
    *,
    workers: int | None = None,
    spec_opts: SpectrumOptions | None = None,
    checkpoint: str | Path | None = None,
    chunk: int = 16,
) -> SweepGrid:
    if kind not in ("photon", "linewidth"):
        raise ValidationError(f"unknown sweep kind {kind!r}")
    grid_spec.check_budget()
    workers = workers or default_workers()
    key = _run_key(kind, base_params, grid_spec, spec_opts)
    done: dict[tuple[int, int], Cell] = {}
    fh = None
    if checkpoint is not None:
        path = Path(checkpoint)
        done = _load_checkpoint(path, key)
        if not path.exists() or path.stat().st_size == 0:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps({"run_key": key}) + "\n")
        fh = path.open("a")
    todo = [(i, j) for i in range(grid_spec.eta_count) for j in range(grid_spec.n_count) if (i, j) not in done]
    chunks = [todo[k : k + chunk] for k in range(0, len(todo), chunk)]

    def record(cells):
        for c in cells:
            done[(c.i_eta, c.i_n)] = c
            if fh is not None:
                fh.write(json.dumps(sanitize(c.to_dict()), sort_keys=True) + "\n")
        if fh is not None:
            fh.flush()

    try:
        if workers == 1 or len(chunks) <= 1:
            for idx in chunks:
                record(_run_chunk((kind, base_params, grid_spec, spec_opts, idx)))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for cells in pool.map(_run_chunk, [(kind, base_params, grid_spec, spec_opts, idx) for idx in chunks]):
                    record(cells)
    finally:
        if fh is not None:
            fh.close()

    cells = [done[(i, j)] for i in range(grid_spec.eta_count) for j in range(grid_spec.n_count)]
    return SweepGrid(grid_spec, base_params, kind, cells, overlays(base_params, grid_spec))


def sweep_photon(grid_spec: GridSpec, base_params: PhysicalParams, **kw) -> SweepGrid:
    """Steady photon number on every cell."""
    return run_sweep("photon", grid_spec, base_params, **kw)


def sweep_linewidth(grid_spec: GridSpec, base_params: PhysicalParams, **kw) -> SweepGrid:
    """Fitted linewidth on every cell (photon number recorded as well)."""
    return run_sweep("linewidth", grid_spec, base_params, **kw)


# --- analysis helpers -----------------------------------------------------------


def sssr_mask(grid: SweepGrid) -> np.ndarray:
    """Cells inside gamma < eta < chi and N > N_crit."""
    b = grid.base
    d = derive(b)
    eta = grid.eta_axis_hz[:, None] * TWO_PI
    n = grid.n_axis[None, :]
    return (eta > b.gamma) & (eta < b.chi) & (n > d.n_crit)


def connected_components(mask: np.ndarray) -> list[list[tuple[int, int]]]:
    """4-connected components of a boolean 2-D mask."""
    from scipy.ndimage import label

    lab, count = label(mask)
    return [list(zip(*np.nonzero(lab == k))) for k in range(1, count + 1)]


def refine_spec(spec: GridSpec, i_eta: int, i_n: int, half_width: int = 2, factor: int = 2) -> GridSpec:
    """Grid with ``factor`` times finer log spacing around cell (i_eta, i_n),
    spanning ``half_width`` original steps on each side (clipped to the axes)."""
    if spec.spacing != "log":
        raise ValidationError("refinement is defined for log axes")

    def sub(values, k):
        lo, hi = max(k - half_width, 0), min(k + half_width, len(values) - 1)
        count = (hi - lo) * factor + 1
        return count, float(values[lo]), float(values[hi])

    nc, nlo, nhi = sub(spec.n_axis(), i_n)
    ec, elo, ehi = sub(spec.eta_axis_hz(), i_eta)
    return GridSpec(nc, nlo, nhi, ec, elo, ehi, spec.spacing, spec.max_cells, spec.cell_timeout)
