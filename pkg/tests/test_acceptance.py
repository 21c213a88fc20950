"""Acceptance criteria, each at its stated tolerance.

Every test records one line in ``conftest.ACCEPTANCE_LOG`` (printed in the
terminal summary) and prints it, then asserts. Criteria that the model does
not meet are reported as FAIL rather than loosened.
"""

import math
import time

import numpy as np
import pytest

import conftest
from oracles import brute_force_traces, lorentzian_fwhm_of_exponential
from srlaser import cli
from srlaser import meanfield as mf
from srlaser.dicke_oracle import DensityState, DickeSpace, OracleParams, compare_mft_me, me_evolve
from srlaser.model import (
    TWO_PI,
    PhysicalParams,
    derive,
    linewidth_bad_cavity_haken,
    linewidth_bad_cavity_photon,
    linewidth_cooperativity,
    linewidth_schawlow_townes,
)
from srlaser.spectrum import CorrelationTrace, fit_lorentzian, linewidth, power_spectrum, regression_modes
from srlaser.sweep import GridSpec, connected_components, refine_spec, sssr_mask, sweep_linewidth
from test_dicke import superradiant_peak


def record(name: str, ok: bool, detail: str) -> None:
    conftest.ACCEPTANCE_LOG.append((name, ok, detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def test_c1_analytic_limit():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        r = 10 ** rng.uniform(2, 9, 4)
        p = PhysicalParams(gamma=r[0], kappa=r[1], g=0.0, chi=r[2], eta=r[3], n_atoms=10 ** rng.uniform(0, 12))
        s = mf.steady_state(p)
        z = (p.eta - p.gamma) / (p.eta + p.gamma)
        worst = max(worst, abs(s.inversion - z), abs(s.n_photon))
    dt = time.perf_counter() - t0
    record("1 g=0 analytic limit", worst < 1e-8 and dt < 10, f"max error {worst:.2e} over 100 sets, {dt:.2f} s")


def test_c2_formula_identities():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst_id = 0.0
    for _ in range(1000):
        gamma, kappa, g = 10 ** rng.uniform(3, 9, 3)
        d = derive(PhysicalParams(gamma=gamma, kappa=kappa, g=g, chi=0.0, eta=0.0, n_atoms=1.0))
        worst_id = max(
            worst_id,
            abs(d.n_c / d.m_c / (kappa / gamma) - 1),
            abs(linewidth_bad_cavity_photon(gamma, kappa, gamma**2 / g**2) / linewidth_cooperativity(d.c1, gamma) - 1),
        )
    nu, gamma, p_out = 2e14, 1e6, 1e-9
    limit_ok = True
    ratios = []
    for ratio in (1e-2, 1e-3, 1e-4):
        kappa = ratio * 2 * gamma
        err = abs(linewidth_bad_cavity_haken(nu, nu, kappa, gamma, p_out, 1.0, 0.0) / linewidth_schawlow_townes(nu, kappa, p_out) - 1)
        limit_ok &= err < 10 * kappa / (2 * gamma)
        ratios.append(err / (kappa / (2 * gamma)))
    dt = time.perf_counter() - t0
    ok = worst_id < 1e-12 and limit_ok and dt < 1
    record("2 formula identities", ok, f"identity error {worst_id:.1e}, good-cavity error / (kappa/2gamma) = {max(ratios):.2f}, {dt:.2f} s")


def test_c3_derived_anchors(fig2_params):
    d = derive(fig2_params)
    coop = linewidth_cooperativity(d.c1, fig2_params.gamma)
    e1 = abs(d.c1 / 1.96e-7 - 1)
    e2 = abs(d.n_crit / 1.02e9 - 1)
    e3 = abs(coop / 6.2e-3 - 1)
    ok = e1 <= 1e-12 and e2 <= 0.01 and e3 <= 0.01
    record("3 derived anchors", ok, f"C1 {d.c1:.6g} (rel {e1:.1e}), N_crit {d.n_crit:.6g} ({e2:.2%}), cooperative linewidth {coop * 1e3:.4f} mHz ({e3:.2%})")


def test_c4_spectrum_pipeline():
    t0 = time.perf_counter()
    worst_g0 = 0.0
    for kappa_hz in (1e4, 1e5, 1e6, 1e7, 1e8):
        p = PhysicalParams.from_hz(gamma=1e5, kappa=kappa_hz, g=0.0, chi=1e7, eta=1e6, n_atoms=1e10)
        worst_g0 = max(worst_g0, abs(linewidth(p).fwhm / kappa_hz - 1))
    worst_syn = 0.0
    for gamma in np.logspace(-3, 6, 10) * TWO_PI:
        dt = 1.0 / (50 * gamma)
        t = np.arange(int(round(math.log(1e6) / gamma / dt)) + 1) * dt
        fit = fit_lorentzian(power_spectrum(CorrelationTrace(t, np.exp(-gamma * t).astype(complex), dt)))
        worst_syn = max(worst_syn, abs(fit.fwhm / lorentzian_fwhm_of_exponential(gamma) - 1))
    dt = time.perf_counter() - t0
    ok = worst_g0 < 5e-3 and worst_syn < 5e-3 and dt < 60
    record("4 spectrum pipeline", ok, f"g=0 kappa pole {worst_g0:.2%}, exponentials over 9 decades {worst_syn:.2%}, {dt:.1f} s")


def test_c5_regression_oracle(fig2_params):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    errors = []
    while len(errors) < 200:
        p = fig2_params.replace(n_atoms=10 ** rng.uniform(6, 12), eta=TWO_PI * 10 ** rng.uniform(3, 9))
        s = mf.steady_state(p)
        if s.n_photon < 1e-6 or not mf.is_stable(s, p):
            continue
        lam = regression_modes(s, p).eigenvalues.real
        if abs(lam[1]) < 10 * abs(lam[0]):
            continue
        res = linewidth(p, steady=s)
        errors.append(abs(res.fwhm / res.predicted_fwhm - 1))
    dt = time.perf_counter() - t0
    errors = np.array(errors)
    ok = errors.max() < 0.02 and dt < 300
    detail = f"max deviation {errors.max():.2%}, {np.sum(errors >= 0.02)}/200 draws over 2%, median {np.median(errors):.2%}, {dt:.0f} s"
    record("5 regression-matrix oracle", ok, detail)


def test_c6_mft_me_consistency():
    p = PhysicalParams.from_hz(gamma=7.5e3, kappa=160e3, g=100e3, chi=0.0, eta=1e5, n_atoms=4)
    etas = np.logspace(math.log10(p.gamma), math.log10(10 * p.kappa), 8)
    t0 = time.perf_counter()
    tab = compare_mft_me(p, range(4, 11), etas, max_fock=16)
    dt = time.perf_counter() - t0
    ratios = np.array([r.ratio for r in tab.rows])
    shifts = tab.argmax_shift()
    ok = np.all((ratios >= 0.5) & (ratios <= 2.0)) and max(abs(s) for s in shifts.values()) <= 1 and dt < 900
    detail = f"ratio range [{ratios.min():.3f}, {ratios.max():.3f}], max argmax shift {max(abs(s) for s in shifts.values())}, {dt:.1f} s"
    record("6 MFT-ME consistency", ok, detail)


def test_c7a_dicke_exactness():
    t0 = time.perf_counter()
    worst = 0.0
    times = np.linspace(0, 3, 7)
    for rates in (
        dict(g=1.0, kappa=0.7, gamma_local_down=0.3, gamma_local_up=0.4, gamma_dephasing=0.2),
        dict(g=1.3, kappa=0.5, gamma_collective=0.2, gamma_local_up=0.5, delta=0.3),
    ):
        for n in (2, 3):
            op = OracleParams(n_fock=4, **rates)
            space = DickeSpace(n, 4)
            for p_exc in (1.0, 0.3):
                ref_n, ref_z = brute_force_traces(op, n, np.diag([p_exc, 1 - p_exc]), 4, times)
                tr = me_evolve(op, space, DensityState.product(space, p_exc), times)
                worst = max(worst, np.abs(tr.n_photon - ref_n).max(), np.abs(tr.inversion_per_atom - ref_z).max())
    dt = time.perf_counter() - t0
    record("7a Dicke vs brute force (N=2,3)", worst < 1e-8, f"max deviation {worst:.1e}, {dt:.1f} s")


def test_c7b_superradiant_scaling():
    t0 = time.perf_counter()
    ns = np.array([4, 8, 16])
    peaks = np.array([superradiant_peak(int(n))[1] for n in ns])
    slope = np.polyfit(np.log(ns), np.log(peaks), 1)[0]
    dt = time.perf_counter() - t0
    ok = abs(slope / 2 - 1) < 0.05 and dt < 300
    detail = f"peak-rate exponent {slope:.3f} (peak/N^2 = {', '.join(f'{v:.3f}' for v in peaks / ns**2)}), {dt:.1f} s"
    record("7b superradiant N^2 scaling", ok, detail)


@pytest.fixture(scope="module")
def fig2_sweep():
    base = PhysicalParams.from_hz(gamma=1e5, kappa=1e8, g=1.4e3, chi=1e7, eta=1e6, n_atoms=1e10)
    t0 = time.perf_counter()
    grid = sweep_linewidth(GridSpec(60, 1e6, 1e12, 60, 1e3, 1e9), base)
    return grid, time.perf_counter() - t0


def test_c8a_bright_region_below_overlay(fig2_sweep):
    grid, dt = fig2_sweep
    n = grid.matrix("n_photon")
    # lasing saturates the gain: the inversion sits below its pump-only value
    # (eta - gamma) / (eta + gamma). Cells with n >= 1 but an unsaturated
    # inversion are amplified spontaneous emission from ~1e10 inverted atoms.
    eta = grid.eta_axis_hz[:, None] * TWO_PI
    z0 = (eta - grid.base.gamma) / (eta + grid.base.gamma)
    depletion = (z0 - grid.matrix("inversion")) / (1 + z0)
    bright = (n >= 1.0) & (depletion > 1e-3)
    above = ~(grid.eta_axis_hz[:, None] < grid.overlays.max_pump_hz[None, :])
    ok = bright.any() and not (bright & above).any()
    detail = (
        f"{bright.sum()} lasing cells, {(bright & above).sum()} above the overlay; "
        f"{((n >= 1) & above).sum()} unsaturated cells above it have n >= 1 "
        f"(max depletion there {np.nanmax(np.where(above, depletion, np.nan)):.1e}); sweep {dt:.0f} s"
    )
    record("8a bright region below eta = N C1 gamma", ok, detail)


def test_c8b_sub_gamma_region(fig2_sweep):
    grid, _ = fig2_sweep
    fwhm = np.where(grid.status_matrix() == "ok", grid.matrix("fwhm_hz"), np.nan)
    inside = sssr_mask(grid) & (fwhm < grid.base.gamma / TWO_PI)
    comps = connected_components(inside)
    sizes = sorted((len(c) for c in comps), reverse=True)
    record("8b connected sub-gamma region in the SSSR window", bool(comps), f"{len(comps)} component(s), sizes {sizes[:3]}")


def test_c8c_refinement(fig2_sweep):
    grid, _ = fig2_sweep
    mask = sssr_mask(grid)
    fwhm = np.where((grid.status_matrix() == "ok") & mask, grid.matrix("fwhm_hz"), np.nan)
    i, j = np.unravel_index(np.nanargmin(fwhm), fwhm.shape)
    fine = sweep_linewidth(refine_spec(grid.spec, int(i), int(j)), grid.base)
    ffine = np.where((fine.status_matrix() == "ok") & sssr_mask(fine), fine.matrix("fwhm_hz"), np.nan)
    change = abs(np.nanmin(ffine) / fwhm[i, j] - 1)
    detail = f"min FWHM {fwhm[i, j]:.4g} Hz at eta {grid.eta_axis_hz[i]:.3g} Hz, N {grid.n_axis[j]:.3g}; refined {np.nanmin(ffine):.4g} Hz ({change:.1%})"
    record("8c 2x refinement near the minimum", change < 0.1, detail)


def test_c9_determinism(tmp_path, capsys):
    args = ["sweep", "-p", "fig2", "-s", "sweep.n_count=8", "-s", "sweep.eta_count=8", "-s", "sweep.kind='linewidth'"]
    codes = [cli.main([*args, "-o", str(tmp_path / f"w{w}"), "--workers", str(w)]) for w in (1, 2, 3)]
    capsys.readouterr()
    outs = [{p.name: p.read_bytes() for p in sorted((tmp_path / f"w{w}").iterdir())} for w in (1, 2, 3)]
    ok = codes == [0, 0, 0] and outs[0] == outs[1] == outs[2] and len(outs[0]) > 0
    record("9 determinism across worker counts", ok, f"{len(outs[0])} files identical for 1, 2 and 3 workers")
