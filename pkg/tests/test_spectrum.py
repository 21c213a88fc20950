import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import expm_apply_mp, lorentzian_fwhm_of_exponential
from srlaser import meanfield as mf
from srlaser.errors import InsufficientDecayError, ResolutionError, SteadyStateError, ValidationError
from srlaser.model import TWO_PI, PhysicalParams
from srlaser.spectrum import (
    CorrelationTrace,
    SpectrumOptions,
    choose_grid,
    Spectrum,
    fit_lorentzian,
    linewidth,
    lorentzian,
    power_spectrum,
    regression_correlation,
    regression_initial,
    regression_matrix,
    regression_modes,
)


def exp_trace(gamma, omega=0.0, samples_per_decay=50, floor=1e-6):
    dt = 1.0 / (samples_per_decay * max(gamma, abs(omega) / 5 if omega else gamma))
    t_max = math.log(1 / floor) / gamma
    t = np.arange(int(round(t_max / dt)) + 1) * dt
    return CorrelationTrace(t, np.exp(-gamma * t + 1j * omega * t), dt)


def test_regression_matrix_form(fig2_params):
    ss = mf.steady_state(fig2_params)
    m = regression_matrix(ss, fig2_params)
    p = fig2_params
    assert m[0, 0] == pytest.approx(-p.kappa / 2)
    assert m[1, 1] == pytest.approx(-((p.eta + p.gamma) / 2 + p.chi))
    assert m[0, 1] == pytest.approx(1j * p.g * p.n_atoms / 2)
    assert m[1, 0] == pytest.approx(-1j * p.g / 2 * ss.inversion)
    # stationarity of the regression vector's first component at t=0
    c0 = regression_initial(ss, p)
    assert abs((m @ c0)[0]) < 1e-8 * p.kappa * abs(c0[0])


def test_g0_correlation_is_field_decay():
    p = PhysicalParams.from_hz(gamma=1e5, kappa=1e6, g=0.0, chi=1e6, eta=2e5, n_atoms=1e6)
    ss = mf.steady_state(p)
    dt = 0.05 / p.kappa
    tr = regression_correlation(ss, p, 20 / p.kappa, dt)
    assert tr.g1[0] == 1.0  # normalised limit of the empty cavity
    np.testing.assert_allclose(tr.g1, np.exp(-p.kappa * tr.times / 2), rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("n_atoms,eta_hz", [(1e10, 1e6), (3e9, 4e6), (1e8, 1e5), (5e11, 3e7)])
def test_correlation_matches_closed_form_expm(n_atoms, eta_hz):
    p = PhysicalParams.from_hz(gamma=1e5, kappa=1e8, g=1.4e3, chi=1e7, eta=eta_hz, n_atoms=n_atoms)
    ss = mf.steady_state(p)
    modes = regression_modes(ss, p)
    dt, _ = choose_grid(modes, SpectrumOptions())
    tr = regression_correlation(ss, p, 5 / abs(modes.slow.real), dt)
    m = regression_matrix(ss, p)
    c0 = regression_initial(ss, p)
    idx = np.unique(np.linspace(0, len(tr.times) - 1, 40).astype(int))
    ref = np.array([expm_apply_mp(m, c0, tr.times[k])[0] for k in idx])
    err = np.abs(tr.g1[idx] - ref) / abs(c0[0])
    assert err.max() < 1e-8
    assert tr.g1[0] == ss.n_photon


def test_correlation_guards(fig2_params):
    ss = mf.steady_state(fig2_params)
    with pytest.raises(ResolutionError):
        regression_correlation(ss, fig2_params, 10.0, 1.0)
    bad = mf.MeanFieldState(ss.n_photon * 1.1, ss.coherence, ss.inversion, ss.spin_corr)
    with pytest.raises(SteadyStateError):
        regression_correlation(bad, fig2_params, 1e-6, 1e-11)
    with pytest.raises(ValidationError):
        regression_correlation(ss, fig2_params, -1.0, 1e-11)


@pytest.mark.parametrize("gamma", np.logspace(-3, 6, 10) * TWO_PI)
def test_exponential_gives_lorentzian(gamma):
    spec = power_spectrum(exp_trace(gamma), pad_factor=8)
    fit = fit_lorentzian(spec)
    assert fit.fwhm == pytest.approx(lorentzian_fwhm_of_exponential(gamma), rel=5e-3)
    assert abs(fit.center) < 1e-3 * fit.fwhm


def test_shift_theorem():
    gamma, omega = TWO_PI * 10.0, TWO_PI * 300.0
    fit0 = fit_lorentzian(power_spectrum(exp_trace(gamma, samples_per_decay=200)))
    fit1 = fit_lorentzian(power_spectrum(exp_trace(gamma, omega, samples_per_decay=200)))
    assert fit1.center == pytest.approx(omega / TWO_PI, rel=1e-3)
    assert fit1.fwhm == pytest.approx(fit0.fwhm, rel=5e-3)


def test_parseval_and_positivity():
    gamma = TWO_PI * 50.0
    tr = exp_trace(gamma, samples_per_decay=400, floor=1e-9)
    spec = power_spectrum(tr, pad_factor=4)
    assert spec.psd.min() >= -1e-9 * spec.psd.max()
    # sum psd df is the Hermitian g1 at t=0 (discretised transform)
    assert np.sum(spec.psd) * spec.df == pytest.approx(tr.g1[0].real, rel=1e-6)
    # integral over the line equals 2 int_0^inf Re g1 dt = 2/gamma
    assert spec.psd.max() == pytest.approx(2 / gamma, rel=1e-3)


def test_resolution_metadata():
    tr = exp_trace(TWO_PI)
    for pad in (1, 3, 8):
        spec = power_spectrum(tr, pad_factor=pad)
        assert spec.df == pytest.approx(1 / (2 * tr.t_max * pad), rel=1e-9)
        assert np.any(spec.freqs == 0.0)


def test_decay_guards():
    gamma = 1.0
    dt = 0.01
    t = np.arange(101) * dt  # only one decay time
    tr = CorrelationTrace(t, np.exp(-gamma * t), dt)
    with pytest.raises(InsufficientDecayError):
        power_spectrum(tr)
    spec = power_spectrum(tr, window="exp-tail")
    assert spec.warnings
    t = np.arange(int(8 / gamma / dt) + 1) * dt
    spec = power_spectrum(CorrelationTrace(t, np.exp(-gamma * t), dt))
    assert any("truncation" in w for w in spec.warnings)
    with pytest.raises(ValidationError):
        power_spectrum(tr, window="hann")


def test_fit_exact_lorentzian():
    f = np.linspace(-50, 50, 20001)
    spec = Spectrum(f, lorentzian(f, 1.0, 0.0, 0.5))
    fit = fit_lorentzian(spec)
    assert fit.hwhm == pytest.approx(0.5, rel=1e-6)
    assert fit.amplitude == pytest.approx(1.0, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(1e-6, 1e6), shift=st.floats(-1e3, 1e3))
def test_fit_invariances(scale, shift):
    f = np.linspace(-40, 40, 8001)
    psd = lorentzian(f, 2.0, 0.3, 0.7) * (1 + 1e-3 * np.cos(7 * f))  # not an exact Lorentzian
    base = fit_lorentzian(Spectrum(f, psd))
    scaled = fit_lorentzian(Spectrum(f, scale * psd))
    moved = fit_lorentzian(Spectrum(f + shift, psd))
    assert scaled.hwhm == pytest.approx(base.hwhm, rel=1e-8)
    assert scaled.center == pytest.approx(base.center, rel=1e-8, abs=1e-10)
    assert scaled.amplitude == pytest.approx(scale * base.amplitude, rel=1e-8)
    assert moved.center - shift == pytest.approx(base.center, abs=1e-8 * max(1.0, abs(shift)))
    assert moved.hwhm == pytest.approx(base.hwhm, rel=1e-8)
    assert moved.amplitude == pytest.approx(base.amplitude, rel=1e-8)


def test_fit_needs_resolution():
    f = np.linspace(-50, 50, 101)
    with pytest.raises(ResolutionError):
        fit_lorentzian(Spectrum(f, lorentzian(f, 1.0, 0.0, 0.5)))


def test_pad_convergence():
    tr = exp_trace(TWO_PI * 3.0, samples_per_decay=40)
    widths = [fit_lorentzian(power_spectrum(tr, pad_factor=p)).hwhm for p in (8, 16)]
    assert abs(widths[1] / widths[0] - 1) < 1e-3


def test_g0_pipeline_gives_kappa_pole():
    for kappa_hz in (1e4, 1e6, 1e8):
        p = PhysicalParams.from_hz(gamma=1e5, kappa=kappa_hz, g=0.0, chi=1e7, eta=1e6, n_atoms=1e10)
        res = linewidth(p)
        assert res.fwhm == pytest.approx(p.kappa / TWO_PI, rel=5e-3)


def test_linewidth_artifacts(fig2_params):
    res = linewidth(fig2_params)
    assert res.trace.g1[0] == res.steady.n_photon
    assert res.fwhm == pytest.approx(res.predicted_fwhm, rel=0.02)
    assert res.fwhm < fig2_params.gamma / TWO_PI
