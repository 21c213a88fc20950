"""Mean-field moment equations for the incoherently pumped bad-cavity laser.

State: photon number <a+a>, atom-field coherence <a+ s1->, inversion <sz>
and the spin-spin correlation <s1+ s2->. Higher cumulants are dropped. The
integrator works on a real 6-vector::

    [n, Re c, Im c, sz, Re s, Im s]

At zero detuning the dynamics leave the subspace {Re c = 0, Im s = 0}
invariant; the fixed point inside it solves a quadratic (see
:func:`subspace_fixed_point`), which seeds the Newton polish.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import InvariantViolation, SteadyStateError, StepSizeError, ValidationError
from .model import PhysicalParams

EPS_NUM = 1e-10
SS_ATOL = 1e-10
INVERSION_SLACK = 1e-6


@dataclass(frozen=True)
class MeanFieldState:
    n_photon: float
    coherence: complex
    inversion: float
    spin_corr: complex

    @classmethod
    def zeros(cls) -> "MeanFieldState":
        return cls(0.0, 0j, 0.0, 0j)

    @classmethod
    def dark(cls) -> "MeanFieldState":
        return cls(0.0, 0j, -1.0, 0j)

    @classmethod
    def from_vector(cls, y: Sequence[float]) -> "MeanFieldState":
        return cls(float(y[0]), complex(y[1], y[2]), float(y[3]), complex(y[4], y[5]))

    def to_vector(self) -> np.ndarray:
        c, s = complex(self.coherence), complex(self.spin_corr)
        return np.array([self.n_photon, c.real, c.imag, self.inversion, s.real, s.imag], dtype=float)

    def is_physical(self, slack: float = EPS_NUM) -> bool:
        return self.n_photon >= -slack and -1.0 - slack <= self.inversion <= 1.0 + slack

    def to_dict(self) -> dict:
        c, s = complex(self.coherence), complex(self.spin_corr)
        return {
            "n_photon": self.n_photon,
            "coherence_re": c.real,
            "coherence_im": c.imag,
            "sigma_z": self.inversion,
            "spin_corr_re": s.real,
            "spin_corr_im": s.imag,
        }


def _rates(p: PhysicalParams):
    coh_decay = 0.5 * (p.eta + p.gamma + p.kappa) + p.chi
    spin_decay = p.gamma + p.eta + 2.0 * p.chi
    return coh_decay, spin_decay


def rhs_vector(y: np.ndarray, p: PhysicalParams) -> np.ndarray:
    n, cr, ci, sz, sr, si = y
    gc, gs = _rates(p)
    g, big_n, d = p.g, p.n_atoms, p.delta
    # c - c* = 2i Im c, so -i g N/2 (c - c*) = g N Im c
    return np.array(
        [
            -p.kappa * n + g * big_n * ci,
            -gc * cr - d * ci - 0.5 * g * (big_n - 1.0) * si,
            -gc * ci + d * cr + 0.5 * g * (sz * n + 0.5 * (sz + 1.0) + (big_n - 1.0) * sr),
            -2.0 * g * ci - p.gamma * (1.0 + sz) + p.eta * (1.0 - sz),
            -gs * sr + g * sz * ci,
            -gs * si,
        ]
    )


def jacobian_vector(y: np.ndarray, p: PhysicalParams) -> np.ndarray:
    n, cr, ci, sz, sr, si = y
    gc, gs = _rates(p)
    g, big_n, d = p.g, p.n_atoms, p.delta
    jac = np.zeros((6, 6))
    jac[0, 0] = -p.kappa
    jac[0, 2] = g * big_n
    jac[1, 1] = -gc
    jac[1, 2] = -d
    jac[1, 5] = -0.5 * g * (big_n - 1.0)
    jac[2, 0] = 0.5 * g * sz
    jac[2, 1] = d
    jac[2, 2] = -gc
    jac[2, 3] = 0.5 * g * (n + 0.5)
    jac[2, 4] = 0.5 * g * (big_n - 1.0)
    jac[3, 2] = -2.0 * g
    jac[3, 3] = -p.gamma - p.eta
    jac[4, 2] = g * sz
    jac[4, 3] = g * ci
    jac[4, 4] = -gs
    jac[5, 5] = -gs
    return jac


def rhs(state: MeanFieldState, params: PhysicalParams) -> MeanFieldState:
    """Time derivative of every moment, returned as a state-shaped value."""
    return MeanFieldState.from_vector(rhs_vector(state.to_vector(), params))


def _scales(y: np.ndarray) -> np.ndarray:
    c_mag = math.hypot(y[1], y[2])
    s_mag = math.hypot(y[4], y[5])
    return np.array(
        [max(abs(y[0]), 1e-30), max(c_mag, 1e-30), max(c_mag, 1e-30), 1.0, max(s_mag, 1e-30), max(s_mag, 1e-30)]
    )


def residual_norm(state: MeanFieldState | np.ndarray, params: PhysicalParams) -> float:
    """Steady-state residual in units of the largest rate.

    Each derivative is divided by the magnitude of its own moment (the
    inversion is already O(1)), so a value of 1e-10 means every moment changes
    by less than 1e-10 of itself per 1/max_rate.
    """
    y = state.to_vector() if isinstance(state, MeanFieldState) else np.asarray(state, float)
    scale = params.max_rate
    if scale == 0:
        return 0.0
    f = rhs_vector(y, params)
    return float(np.max(np.abs(f) / _scales(y)) / scale)


def rounding_floor(state: MeanFieldState | np.ndarray, params: PhysicalParams) -> float:
    """Smallest :func:`residual_norm` that double precision can resolve at ``state``.

    Each derivative is a sum of terms that cancel at the fixed point; its
    rounding error is about eps times the sum of the term magnitudes, with
    ``1 + sigma_z`` counted as ``1 + |sigma_z|`` since sigma_z near -1 keeps
    only its absolute precision.
    """
    y = state.to_vector() if isinstance(state, MeanFieldState) else np.asarray(state, float)
    scale = params.max_rate
    if scale == 0:
        return 0.0
    n, cr, ci, sz, sr, si = np.abs(y)
    p = params
    gc, gs = _rates(p)
    g, big_n, d = p.g, p.n_atoms, abs(p.delta)
    terms = np.array(
        [
            p.kappa * n + g * big_n * ci,
            gc * cr + d * ci + 0.5 * g * (big_n - 1.0) * si,
            gc * ci + d * cr + 0.5 * g * (sz * n + 0.5 * (sz + 1.0) + (big_n - 1.0) * sr),
            2.0 * g * ci + (p.gamma + p.eta) * (1.0 + sz),
            gs * sr + g * sz * ci,
            gs * si,
        ]
    )
    return float(np.max(np.finfo(float).eps * terms / _scales(y)) / scale)


def is_converged(state: MeanFieldState | np.ndarray, params: PhysicalParams, target: float = SS_ATOL) -> bool:
    """Residual below ``target`` or, where cancellation forbids that, within 8x the rounding floor."""
    return residual_norm(state, params) < max(target, 8.0 * rounding_floor(state, params))


def is_stable(state: MeanFieldState, params: PhysicalParams) -> bool:
    return stability_margin(state, params) < 0


def stability_margin(state: MeanFieldState, params: PhysicalParams) -> float:
    """Largest real part of the linearisation eigenvalues (rad/s)."""
    ev = np.linalg.eigvals(jacobian_vector(state.to_vector(), params))
    return float(ev.real.max())


# --- time evolution -----------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    values: np.ndarray  # (len(times), 6) real components
    params: PhysicalParams

    def __post_init__(self):
        if self.values.shape != (len(self.times), 6):
            raise ValueError("trajectory values must have shape (len(times), 6)")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def n_photon(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def coherence(self) -> np.ndarray:
        return self.values[:, 1] + 1j * self.values[:, 2]

    @property
    def inversion(self) -> np.ndarray:
        return self.values[:, 3]

    @property
    def spin_corr(self) -> np.ndarray:
        return self.values[:, 4] + 1j * self.values[:, 5]

    @property
    def states(self) -> list[MeanFieldState]:
        return [MeanFieldState.from_vector(v) for v in self.values]

    @property
    def final(self) -> MeanFieldState:
        return MeanFieldState.from_vector(self.values[-1])


def default_atol(tol: float) -> np.ndarray:
    return tol * np.array([1e-6, 1e-12, 1e-12, 1e-9, 1e-12, 1e-12])


def evolve(
    initial: MeanFieldState,
    params: PhysicalParams,
    t_end: float,
    tol: float = 1e-8,
    t_eval: Iterable[float] | None = None,
    n_samples: int = 201,
    method: str = "LSODA",
    atol: np.ndarray | float | None = None,
) -> Trajectory:
    """Integrate the moment equations from ``initial`` up to ``t_end`` seconds.

    The implicit-capable integrators of :func:`scipy.integrate.solve_ivp`
    receive the analytic Jacobian. Output is sampled on ``t_eval`` or on
    ``n_samples`` uniformly spaced times including 0 and ``t_end``.
    """
    if not t_end > 0:
        raise ValidationError(f"t_end must be > 0, got {t_end!r}")
    if not 1e-14 < tol < 1e-2:
        raise ValidationError(f"tol must lie in (1e-14, 1e-2), got {tol!r}")
    if t_eval is None:
        t_eval = np.linspace(0.0, t_end, n_samples)
    t_eval = np.asarray(list(t_eval), dtype=float)
    if atol is None:
        atol = default_atol(tol)
    y0 = initial.to_vector()
    kwargs = {} if method in ("RK45", "RK23", "DOP853") else {"jac": lambda t, y: jacobian_vector(y, params)}
    sol = solve_ivp(
        lambda t, y: rhs_vector(y, params),
        (0.0, t_end),
        y0,
        method=method,
        t_eval=t_eval,
        rtol=tol,
        atol=atol,
        **kwargs,
    )
    if sol.status < 0:
        t_reached = float(sol.t[-1]) if sol.t.size else 0.0
        raise StepSizeError(f"integration failed at t={t_reached:.6g} s: {sol.message}", t_reached)
    values = sol.y.T.copy()
    _check_trajectory(values)
    return Trajectory(sol.t.copy(), values, params)


def _check_trajectory(values: np.ndarray) -> None:
    sz = values[:, 3]
    bad = np.flatnonzero((sz < -1 - INVERSION_SLACK) | (sz > 1 + INVERSION_SLACK))
    if bad.size:
        raise InvariantViolation(f"inversion left [-1, 1]: sigma_z = {sz[bad[0]]:.9g} at sample {bad[0]}")
    n = values[:, 0]
    floor = -INVERSION_SLACK * max(1.0, float(np.max(np.abs(n))))
    bad = np.flatnonzero(n < floor)
    if bad.size:
        raise InvariantViolation(f"negative photon number {n[bad[0]]:.6g} at sample {bad[0]}")


def time_to_plateau(traj: Trajectory, rel_band: float = 1e-3, component: str = "inversion", window: float = 0.0) -> float:
    """Earliest time after which ``component`` stays within a band of its final value.

    The band half-width is ``rel_band`` times the total excursion of the
    component over the trajectory. With ``window > 0`` (seconds, uniform
    sampling assumed) a running mean over that window is tested instead, so
    a steady oscillation counts as a plateau of its cycle average; times then
    refer to the end of each window. Returns ``inf`` if only the last sample
    lies inside the band.
    """
    series = np.real(getattr(traj, component))
    times = traj.times
    if window > 0 and len(times) > 1:
        k = max(1, int(round(window / (times[1] - times[0]))))
        if k >= len(series):
            return math.inf
        c = np.cumsum(np.r_[0.0, series])
        series = (c[k:] - c[:-k]) / k
        times = times[k - 1 :]
    final = series[-1]
    band = rel_band * max(float(np.ptp(series)), 1e-300)
    outside = np.flatnonzero(np.abs(series - final) > band)
    if outside.size == 0:
        return float(times[0])
    idx = outside[-1] + 1
    if idx >= len(series) - 1:
        return math.inf
    return float(times[idx])


# --- steady states ------------------------------------------------------------


def subspace_fixed_point(params: PhysicalParams) -> MeanFieldState | None:
    """Fixed point of the zero-detuning invariant subspace, in closed form.

    With c = i y and real s, stationarity gives n = g N y / kappa,
    s = g sz y / (gamma + eta + 2 chi) and sz = (eta - gamma - 2 g y)/(eta + gamma);
    substituting into the coherence equation leaves a quadratic in y with a
    single non-negative root. Returns None when no physical root exists.
    """
    p = params
    if p.eta + p.gamma == 0:
        return None
    gc, gs = _rates(p)
    if p.kappa == 0 or gs == 0:
        return None
    g, big_n = p.g, p.n_atoms
    gain = g * big_n / p.kappa + (big_n - 1.0) * g / gs
    a = (p.eta - p.gamma) / (p.eta + p.gamma)
    b = 2.0 * g / (p.eta + p.gamma)
    qa = 0.5 * g * gain * b
    qb = gc - 0.5 * g * gain * a + 0.25 * g * b
    qc = -0.25 * g * (a + 1.0)
    if qa == 0.0:
        if qb == 0.0:
            return None
        roots = [-qc / qb]
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc < 0:
            return None
        sq = math.sqrt(disc)
        # numerically stable pair
        q = -0.5 * (qb + math.copysign(sq, qb)) if qb != 0 else -0.5 * sq
        roots = [q / qa, qc / q] if q != 0 else [0.0]
    for y in sorted(roots, reverse=True):
        if y < 0 or not math.isfinite(y):
            continue
        sz = a - b * y
        if -1.0 - EPS_NUM <= sz <= 1.0 + EPS_NUM:
            return MeanFieldState(g * big_n * y / p.kappa, 1j * y, sz, complex(g * sz * y / gs))
    return None


def _newton(y0: np.ndarray, p: PhysicalParams, max_iter: int = 100, deadline: float | None = None):
    y = y0.copy()
    res = residual_norm(y, p)
    for _ in range(max_iter):
        if res < 1e-14:
            break
        if deadline is not None and time.monotonic() > deadline:
            raise SteadyStateError("Newton polish exceeded its time budget", residual=res, state=y)
        d = _scales(y)
        jac = jacobian_vector(y, p) * d[None, :]
        f = rhs_vector(y, p)
        try:
            step = np.linalg.solve(jac, -f) * d
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac, -f, rcond=None)[0] * d
        lam = 1.0
        while lam > 1e-6:
            trial = y + lam * step
            if trial[0] >= -EPS_NUM and abs(trial[3]) <= 1.0 + EPS_NUM:
                tres = residual_norm(trial, p)
                if tres < res or tres < 1e-14:
                    break
            lam *= 0.5
        else:
            break
        y, res = trial, tres
        if np.all(np.abs(lam * step) <= 1e-15 * np.maximum(np.abs(y), _scales(y) * 1e-3)):
            break
    return y, res


def relax(
    params: PhysicalParams,
    initial: MeanFieldState | None = None,
    target: float = SS_ATOL,
    tol: float = 1e-11,
    max_relaxation_times: float = 5000.0,
    method: str = "LSODA",
    deadline: float | None = None,
) -> tuple[MeanFieldState, float, float]:
    """Integrate from ``initial`` (all zero by default) until the residual drops below ``target``.

    The horizon doubles until either the target is met or the total
    integrated time exceeds ``max_relaxation_times / (gamma + eta)``
    or the wall-clock ``deadline`` (a ``time.monotonic`` value) passes.
    Returns (state, residual, integrated time) without raising.
    """
    p = params
    y = (initial or MeanFieldState.zeros()).to_vector()
    slow = p.gamma + p.eta
    if slow == 0:
        slow = max(p.kappa, p.chi, 1.0)
    horizon = 2.0 / slow
    t_total = 0.0
    t_limit = max_relaxation_times / slow
    atol = default_atol(tol)
    res = residual_norm(y, p)
    jac = lambda t, v: jacobian_vector(v, p)

    expired = [False]

    def f(t, v):
        # past the deadline a zero derivative lets the integrator finish at
        # once (raising inside the LSODA callback prints to stderr); the
        # chunk is then discarded
        if expired[0] or (deadline is not None and time.monotonic() > deadline):
            expired[0] = True
            return np.zeros(6)
        return rhs_vector(v, p)

    while not is_converged(y, p, target) and t_total < t_limit:
        sol = solve_ivp(f, (0.0, horizon), y, method=method, jac=jac, rtol=tol, atol=atol, t_eval=[horizon])
        if expired[0]:
            break
        if sol.status < 0:
            raise StepSizeError(f"relaxation failed after {t_total:.6g} s: {sol.message}", t_total)
        y = sol.y[:, -1]
        t_total += horizon
        res = residual_norm(y, p)
        horizon *= 2.0
    return MeanFieldState.from_vector(y), res, t_total


def steady_state(
    params: PhysicalParams,
    method: str = "rootfind",
    *,
    seed: str = "subspace",
    initial: MeanFieldState | None = None,
    tol: float = 1e-11,
    max_relaxation_times: float = 5000.0,
    deadline: float | None = None,
) -> MeanFieldState:
    """Stationary moments for ``params``.

    ``method="relaxation"`` integrates from the all-zero state (or
    ``initial``) until the scaled residual falls below 1e-10, or below
    8x the double-precision floor where cancellation makes 1e-10 unreachable.
    ``method="rootfind"`` runs a damped Newton iteration on the six real
    components. Its seed is the closed-form zero-detuning fixed point
    (``seed="subspace"``) or the end point of a short relaxation
    (``seed="relaxation"``); the other seed is tried if the first fails.

    The returned fixed point may be linearly unstable, in which case the
    dynamics never settle on it; use :func:`is_stable` to tell.
    """
    p = params
    if p.eta == 0 and p.gamma > 0:
        return MeanFieldState.dark()
    if method == "relaxation":
        state, res, t_int = relax(p, initial, SS_ATOL, tol, max_relaxation_times, deadline=deadline)
        if not is_converged(state, p):
            raise SteadyStateError(
                f"relaxation did not settle: residual {res:.3g} after {t_int:.6g} s",
                residual=res,
                t_integrated=t_int,
                state=state,
            )
        return state
    if method != "rootfind":
        raise ValidationError(f"unknown steady-state method {method!r}")
    order = ["subspace", "relaxation"] if seed == "subspace" else ["relaxation", "subspace"]
    best = None
    for which in order:
        if which == "subspace":
            start = subspace_fixed_point(p)
            if start is None:
                continue
            y0 = start.to_vector()
        else:
            start, _, _ = relax(p, initial, 1e-4, 1e-9, 50.0, deadline=deadline)
            y0 = start.to_vector()
        y, res = _newton(y0, p, deadline=deadline)
        state = MeanFieldState.from_vector(y)
        if is_converged(y, p) and state.is_physical():
            return state
        if best is None or res < best[1]:
            best = (state, res)
    raise SteadyStateError(
        "Newton polish did not converge" + (f": residual {best[1]:.3g}" if best else ""),
        residual=best[1] if best else None,
        state=best[0] if best else None,
    )
