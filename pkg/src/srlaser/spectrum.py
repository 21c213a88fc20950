"""Emission spectrum from the quantum-regression correlation function.

Pipeline: steady state -> two-time field correlation g1(t) = <a+(t) a(0)>
-> power spectrum S(f) = int g1(t) exp(-2 pi i f t) dt -> Lorentzian fit.

The correlation obeys the linear regression system of the field amplitude
and the single-atom dipole with the inversion frozen at its steady value::

    d/dt [C_a, C_s] = M [C_a, C_s],   C_a = <a+(t) a(0)>,  C_s = <s1+(t) a(0)>

    M = [[-(kappa/2 - i delta),  +i g N / 2               ],
         [-i (g/2) <sz>,         -((eta + gamma)/2 + chi)  ]]

with C_a(0) = n_ss and C_s(0) = conj(<a+ s->_ss). These are the amplitude
equations that reproduce the photon-number and coherence moment equations;
for an inverted medium the product of the couplings is positive (gain).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import least_squares

from .errors import (
    BudgetError,
    FitError,
    InsufficientDecayError,
    ResolutionError,
    SteadyStateError,
    ValidationError,
)
from .meanfield import MeanFieldState, is_converged, is_stable, residual_norm, steady_state
from .model import TWO_PI, PhysicalParams

MODE_WEIGHT_FLOOR = 1e-6
DEFAULT_MAX_FFT = 2**23


@dataclass(frozen=True)
class CorrelationTrace:
    times: np.ndarray
    g1: np.ndarray
    dt: float
    params: PhysicalParams | None = None
    steady: MeanFieldState | None = None

    @property
    def t_max(self) -> float:
        return float(self.times[-1])


@dataclass(frozen=True)
class Spectrum:
    freqs: np.ndarray  # Hz, offset from the atomic frequency
    psd: np.ndarray
    warnings: tuple[str, ...] = ()

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0])


@dataclass(frozen=True)
class LorentzianFit:
    amplitude: float
    center: float
    hwhm: float
    rms_residual: float  # relative to the spectral peak
    iterations: int
    window: tuple[float, float]

    @property
    def fwhm(self) -> float:
        return 2.0 * self.hwhm

    def to_dict(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "center_Hz": self.center,
            "hwhm_Hz": self.hwhm,
            "fwhm_Hz": self.fwhm,
            "rms_residual_rel": self.rms_residual,
            "iterations": self.iterations,
            "window_Hz": list(self.window),
        }


def lorentzian(nu, amplitude, center, hwhm):
    """(A/pi) sigma / ((nu - nu0)^2 + sigma^2); integrates to A."""
    return amplitude / math.pi * hwhm / ((nu - center) ** 2 + hwhm**2)


# --- regression ---------------------------------------------------------------


def regression_matrix(steady: MeanFieldState, params: PhysicalParams) -> np.ndarray:
    p = params
    atom_decay = 0.5 * (p.eta + p.gamma) + p.chi
    return np.array(
        [
            [-(0.5 * p.kappa - 1j * p.delta), 0.5j * p.g * p.n_atoms],
            [-0.5j * p.g * steady.inversion, -atom_decay + 0j],
        ],
        dtype=complex,
    )


def regression_initial(steady: MeanFieldState, params: PhysicalParams | None = None) -> np.ndarray:
    """(C_a(0), C_s(0)) = (n_ss, conj(coherence_ss)).

    Without coupling the steady field is empty and g1 vanishes identically;
    in that limit the normalised correlation g1(t)/g1(0) is returned instead,
    i.e. the bare cavity pole with initial vector (1, 0).
    """
    if params is not None and params.g == 0 and steady.n_photon == 0:
        return np.array([1.0 + 0j, 0j])
    return np.array([steady.n_photon + 0j, np.conj(complex(steady.coherence))])


@dataclass(frozen=True)
class RegressionModes:
    eigenvalues: np.ndarray  # rad/s, sorted slowest decay first
    weights: np.ndarray  # contribution of each mode to C_a(0)
    well_conditioned: bool

    @property
    def slow(self) -> complex:
        return complex(self.eigenvalues[0])

    @property
    def fast(self) -> complex:
        return complex(self.eigenvalues[-1])

    def significant(self, floor: float = MODE_WEIGHT_FLOOR) -> np.ndarray:
        """Modes whose Lorentzian peak density |w| / |Re lambda| exceeds
        ``floor`` times that of the strongest mode.

        An unresolved mode below this level shifts the sampled spectrum by
        less than ``floor`` of its peak.
        """
        if not self.well_conditioned:
            return np.ones(len(self.eigenvalues), dtype=bool)
        density = np.abs(self.weights) / np.maximum(np.abs(self.eigenvalues.real), 1e-300)
        return density > floor * density.max()


def _exact_det(m: np.ndarray) -> complex:
    """Determinant of a 2x2 complex matrix, exact for the stored floats.

    At large N the two products cancel to many digits and the slow
    eigenvalue det / lambda_fast inherits that cancellation.
    """
    from fractions import Fraction as F

    a, b, c, d = (complex(v) for v in (m[0, 0], m[0, 1], m[1, 0], m[1, 1]))
    re = F(a.real) * F(d.real) - F(a.imag) * F(d.imag) - (F(b.real) * F(c.real) - F(b.imag) * F(c.imag))
    im = F(a.real) * F(d.imag) + F(a.imag) * F(d.real) - (F(b.real) * F(c.imag) + F(b.imag) * F(c.real))
    return complex(float(re), float(im))


def _eigenvalues(m: np.ndarray) -> np.ndarray:
    """Eigenvalues sorted slowest decay first; the small one from det / large."""
    s = 0.5 * complex(m[0, 0] + m[1, 1])
    det = _exact_det(m)
    q = np.sqrt(s * s - det + 0j)
    big = s + q if abs(s + q) >= abs(s - q) else s - q
    small = det / big if big != 0 else s
    lam = np.array([small, big], dtype=complex)
    return lam[np.argsort(-lam.real, kind="stable")]


def _split_gap(lam: np.ndarray) -> float:
    return float(abs(lam[0] - lam[1]) / max(np.max(np.abs(lam)), 1e-300))


def regression_modes(steady: MeanFieldState, params: PhysicalParams) -> RegressionModes:
    """Eigenvalues of the regression matrix and their weights in C_a.

    C_a(t) = sum_k w_k exp(lambda_k t) with
    w_1 = [(M - lambda_2) c0]_a / (lambda_1 - lambda_2) and w_2 = [(M - lambda_1) c0]_a / (lambda_2 - lambda_1).
    Near an exceptional point (coalescing eigenvalues) the split is not
    meaningful and ``well_conditioned`` is False.
    """
    m = regression_matrix(steady, params)
    lam = _eigenvalues(m)
    c0 = regression_initial(steady, params)
    ok = _split_gap(lam) > 1e-6
    if ok:
        mc = (m @ c0)[0]
        gap = lam[0] - lam[1]
        weights = np.array([(mc - lam[1] * c0[0]) / gap, -(mc - lam[0] * c0[0]) / gap])
    else:
        weights = np.full(2, np.nan + 0j)
    return RegressionModes(lam, weights, ok)


def _propagate(m: np.ndarray, c0: np.ndarray, dt: float, n_steps: int, block: int = 512) -> np.ndarray:
    """C(k dt) for k = 0..n_steps.

    Separated eigenvalues use the two-mode closed form with each exponential
    evaluated directly at k dt. Near-coalescing eigenvalues fall back to
    matrix-exponential propagators evaluated directly within a block of
    samples and chained between blocks.
    """
    lam = _eigenvalues(m)
    t = np.arange(n_steps + 1) * dt
    if _split_gap(lam) > 1e-6:
        l1, l2 = lam
        eye = np.eye(2)
        a1 = (m - l2 * eye) @ c0 / (l1 - l2)
        a2 = (m - l1 * eye) @ c0 / (l2 - l1)
        return np.exp(l1 * t)[:, None] * a1[None, :] + np.exp(l2 * t)[:, None] * a2[None, :]
    ks = np.arange(block)
    props = expm(m[None, :, :] * (ks * dt)[:, None, None])
    jump = expm(m * (block * dt))
    out = np.empty((n_steps + 1, 2), dtype=complex)
    start = c0.astype(complex)
    for b0 in range(0, n_steps + 1, block):
        count = min(block, n_steps + 1 - b0)
        out[b0 : b0 + count] = props[:count] @ start
        start = jump @ start
    return out


def regression_correlation(
    steady: MeanFieldState,
    params: PhysicalParams,
    t_max: float,
    dt: float,
    *,
    check_steady: bool = True,
    max_samples: int = DEFAULT_MAX_FFT,
) -> CorrelationTrace:
    """Sample g1(t) = <a+(t) a(0)> on the grid 0, dt, ..., t_max.

    Every significant regression mode (peak spectral density above 1e-6 of
    the dominant one) must be resolved, ``dt <= 0.1 / |lambda|``; weaker
    modes may alias.
    """
    if not (t_max > 0 and dt > 0):
        raise ValidationError("t_max and dt must be positive")
    if check_steady:
        res = residual_norm(steady, params)
        if not is_converged(steady, params, 1e-8):
            raise SteadyStateError(f"regression needs a converged steady state (residual {res:.3g})", residual=res)
    modes = regression_modes(steady, params)
    sig = modes.significant()
    fastest = float(np.max(np.abs(modes.eigenvalues[sig]))) if sig.any() else 0.0
    if fastest > 0 and dt > 0.1 / fastest * (1 + 1e-12):
        raise ResolutionError(f"dt={dt:.3g} s does not resolve regression rate {fastest:.3g} rad/s (need dt <= {0.1 / fastest:.3g})")
    n_steps = int(round(t_max / dt))
    if n_steps + 1 > max_samples:
        raise BudgetError(f"{n_steps + 1} correlation samples exceed the budget of {max_samples}")
    m = regression_matrix(steady, params)
    c0 = regression_initial(steady, params)
    vals = _propagate(m, c0, dt, n_steps)
    g1 = vals[:, 0]
    g1[0] = c0[0]
    times = np.arange(n_steps + 1) * dt
    return CorrelationTrace(times, g1, dt, params, steady)


# --- spectrum -----------------------------------------------------------------


def power_spectrum(trace: CorrelationTrace, window: str = "none", pad_factor: int = 8) -> Spectrum:
    """Fourier transform of the Hermitian extension g1(-t) = conj(g1(t)).

    The record of length 2 t_max is zero padded to 2 t_max pad_factor, so the
    frequency step is 1 / (2 t_max pad_factor). Frequencies are returned in
    ascending order, centred on zero.
    """
    if pad_factor < 1:
        raise ValidationError("pad_factor must be >= 1")
    g = np.asarray(trace.g1, dtype=complex)
    notes = []
    tail = abs(g[-1]) / abs(g[0]) if g[0] != 0 else 0.0
    if window == "none":
        if tail > 1e-2:
            raise InsufficientDecayError(f"correlation tail {tail:.3g} of g1(0) exceeds 1e-2; extend t_max")
        if tail > 1e-4:
            notes.append(f"truncation: |g1(t_max)|/g1(0) = {tail:.3g} > 1e-4")
    elif window in ("exp-tail", "exponential-tail-truncation"):
        t = trace.times
        start = 0.8 * t[-1]
        taper = np.where(t > start, np.exp(-((t - start) / (0.02 * t[-1]))), 1.0)
        g = g * taper
        if tail > 1e-4:
            notes.append(f"exponential tail taper applied (raw tail {tail:.3g})")
    else:
        raise ValidationError(f"unknown window {window!r}")
    k = len(g) - 1
    length = 2 * pad_factor * k
    if length > DEFAULT_MAX_FFT:
        raise BudgetError(f"FFT length {length} exceeds budget {DEFAULT_MAX_FFT}")
    x = np.zeros(length, dtype=complex)
    x[: k + 1] = g
    n_neg = min(k, length - k - 1)
    if n_neg > 0:
        x[length - n_neg :] = np.conj(g[n_neg:0:-1])
    spec = np.fft.fft(x) * trace.dt
    freqs = np.fft.fftshift(np.fft.fftfreq(length, trace.dt))
    psd = np.fft.fftshift(spec.real)
    peak = float(np.max(np.abs(psd)))
    imag = float(np.max(np.abs(spec.imag)))
    if peak > 0 and imag > 1e-6 * peak:
        notes.append(f"non-Hermitian input: max |Im S| = {imag / peak:.3g} of peak")
    return Spectrum(freqs, psd, tuple(notes))


# --- fitting ------------------------------------------------------------------


def _half_max_estimate(freqs, psd, i_peak):
    half = 0.5 * psd[i_peak]
    lo = i_peak
    while lo > 0 and psd[lo] > half:
        lo -= 1
    hi = i_peak
    while hi < len(psd) - 1 and psd[hi] > half:
        hi += 1

    def cross(i_out, i_in):
        f0, f1, p0, p1 = freqs[i_out], freqs[i_in], psd[i_out], psd[i_in]
        if p1 == p0:
            return f0
        return f0 + (half - p0) * (f1 - f0) / (p1 - p0)

    f_lo = cross(lo, lo + 1) if psd[lo] <= half else freqs[lo]
    f_hi = cross(hi, hi - 1) if psd[hi] <= half else freqs[hi]
    return f_lo, f_hi, hi - lo - 1


def fit_lorentzian(
    spec: Spectrum,
    init: tuple[float, float, float] | None = None,
    window_fwhm: float = 20.0,
    min_points: int = 16,
    max_iter: int = 200,
    xtol: float = 1e-10,
) -> LorentzianFit:
    """Unweighted least-squares Lorentzian fit around the spectral peak.

    ``init`` is (amplitude, center, hwhm); by default the centre is the
    argmax, the width comes from the interpolated half-maximum crossings and
    the amplitude from peak * pi * hwhm. Only points within ``window_fwhm``
    estimated FWHMs of the peak enter the fit.
    """
    freqs, psd = np.asarray(spec.freqs, float), np.asarray(spec.psd, float)
    i_peak = int(np.argmax(psd))
    if psd[i_peak] <= 0:
        raise FitError("spectrum has no positive peak")
    f_lo, f_hi, n_inside = _half_max_estimate(freqs, psd, i_peak)
    if n_inside < min_points:
        raise ResolutionError(f"only {n_inside} samples above half maximum; need {min_points}")
    if init is None:
        sigma0 = 0.5 * (f_hi - f_lo)
        init = (psd[i_peak] * math.pi * sigma0, freqs[i_peak], sigma0)
    a0, c0, s0 = (float(v) for v in init)
    if not s0 > 0:
        raise FitError("initial half width must be positive")
    half_window = window_fwhm * 2.0 * s0
    mask = np.abs(freqs - c0) <= half_window
    nu, y = freqs[mask], psd[mask]
    scale_y = psd[i_peak]
    u = (nu - c0) / s0
    yn = y / scale_y
    # model in units of (hwhm0, peak): A/(pi s0 peak) * w / ((u - shift)^2 + w^2)
    k = a0 / (math.pi * s0 * scale_y)

    def resid(x):
        amp, shift, width = x
        return k * amp * width / ((u - shift) ** 2 + width**2) - yn

    sol = least_squares(
        resid, x0=np.array([1.0, 0.0, 1.0]), method="lm", xtol=xtol, ftol=1e-15, gtol=1e-15, max_nfev=max_iter * 4
    )
    amp_n, shift, width = sol.x
    amp = amp_n * a0
    center = c0 + shift * s0
    hwhm = abs(width) * s0
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    if sol.status <= 0 or not np.all(np.isfinite(sol.x)) or not hwhm > 0:
        raise FitError(f"Lorentzian fit did not converge: {sol.message}", best=(amp, center, hwhm), residual=rms)
    return LorentzianFit(amp, center, hwhm, rms, int(sol.nfev), (float(nu[0]), float(nu[-1])))


# --- end to end ---------------------------------------------------------------


@dataclass(frozen=True)
class SpectrumOptions:
    pad_factor: int = 8
    window: str = "none"
    decay_floor: float = 1e-5
    line_samples: float = 50.0  # samples per slow decay time
    fast_samples: float = 10.0  # samples per fast decay time (significant modes)
    dt: float | None = None
    t_max: float | None = None
    max_samples: int = DEFAULT_MAX_FFT
    faithful_fig3: bool = False


@dataclass(frozen=True)
class LinewidthResult:
    fwhm: float  # Hz
    steady: MeanFieldState
    modes: RegressionModes
    trace: CorrelationTrace
    spectrum: Spectrum
    fit: LorentzianFit

    @property
    def predicted_fwhm(self) -> float:
        """FWHM implied by the slowest regression eigenvalue, -2 Re(lambda)/2pi."""
        return -2.0 * self.modes.slow.real / TWO_PI


def choose_grid(modes: RegressionModes, opts: SpectrumOptions) -> tuple[float, float]:
    """Sampling step and record length resolving every significant mode."""
    if opts.faithful_fig3:
        return 1.0 / 100e6, 1.0
    sig = modes.significant()
    lam = modes.eigenvalues[sig] if sig.any() else modes.eigenvalues
    decays = -lam.real
    if np.any(decays <= 0):
        raise ResolutionError(f"regression mode does not decay (Re lambda = {-decays.min():.3g} rad/s)")
    slow = float(decays.min())
    fast = float(np.max(np.abs(lam)))
    t_max = opts.t_max if opts.t_max is not None else math.log(1.0 / opts.decay_floor) / slow
    dt = opts.dt if opts.dt is not None else min(1.0 / (opts.line_samples * slow), 1.0 / (opts.fast_samples * fast))
    return dt, t_max


def linewidth(
    params: PhysicalParams,
    ss_opts: dict | None = None,
    spec_opts: SpectrumOptions | None = None,
    steady: MeanFieldState | None = None,
) -> LinewidthResult:
    """Fitted FWHM (Hz) of the emission line, with every intermediate artifact."""
    opts = spec_opts or SpectrumOptions()
    if steady is None:
        steady = steady_state(params, **(ss_opts or {}))
    n0 = regression_initial(steady, params)[0].real
    if n0 <= 0:
        raise FitError("no photons in the steady state; spectrum undefined")
    modes = regression_modes(steady, params)
    dt, t_max = choose_grid(modes, opts)
    n_fft = 2 * opts.pad_factor * int(round(t_max / dt))
    if n_fft > opts.max_samples:
        raise BudgetError(
            f"spectrum needs {n_fft} FFT points (slow rate {-modes.slow.real:.3g}, fast {abs(modes.fast):.3g} rad/s); budget {opts.max_samples}"
        )
    trace = regression_correlation(steady, params, t_max, dt, max_samples=opts.max_samples)
    spec = power_spectrum(trace, opts.window, opts.pad_factor)
    fit = fit_lorentzian(spec)
    return LinewidthResult(fit.fwhm, steady, modes, trace, spec, fit)
