"""Static SVG figures. Imported lazily so the numerics never need matplotlib."""

from __future__ import annotations

import numpy as np


def _figure(figsize=(6.0, 4.2)):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt, plt.figure(figsize=figsize)


def spectrum_figure(spec, fit):
    from .spectrum import lorentzian

    plt, fig = _figure()
    ax = fig.add_subplot(111)
    lo, hi = fit.center - 10 * fit.fwhm, fit.center + 10 * fit.fwhm
    sel = (spec.freqs >= lo) & (spec.freqs <= hi)
    ax.plot(spec.freqs[sel], spec.psd[sel], ".", ms=3, label="S(f)")
    f = np.linspace(lo, hi, 801)
    ax.plot(f, lorentzian(f, fit.amplitude, fit.center, fit.hwhm), "-", lw=1, label=f"Lorentzian, FWHM {fit.fwhm:.4g} Hz")
    ax.set_xlabel("frequency offset (Hz)")
    ax.set_ylabel("power spectral density (arb.)")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return fig


def sweep_figure(grid, quantity: str = "n_photon"):
    plt, fig = _figure((6.4, 5.0))
    ax = fig.add_subplot(111)
    data = grid.matrix(quantity)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.log10(np.where(data > 0, data, np.nan))
    n, eta = grid.n_axis, grid.eta_axis_hz
    mesh = ax.pcolormesh(n, eta, z, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label=f"log10 {quantity}")
    ov = grid.overlays
    if ov is not None:
        ax.plot(ov.n_values, ov.max_pump_hz, "w--", lw=1.2, label="N C1 gamma")
        if ov.n_crit is not None and n[0] <= ov.n_crit <= n[-1]:
            ax.axvline(ov.n_crit, color="r", lw=1.2, label="N_crit")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlim(n[0], n[-1])
    ax.set_ylim(eta[0], eta[-1])
    ax.set_xlabel("atom number N")
    ax.set_ylabel("pump rate eta (Hz)")
    ax.legend(frameon=False, fontsize=8, loc="lower right")
    fig.tight_layout()
    return fig


def dynamics_figure(trajs: dict):
    plt, fig = _figure()
    ax = fig.add_subplot(111)
    for label, tr in trajs.items():
        ax.plot(tr.times, tr.inversion, lw=1, label=label)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("<sigma_z>")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return fig


def comparison_figure(table):
    plt, fig = _figure()
    ax = fig.add_subplot(111)
    eta = np.array(table.eta_list) / (2 * np.pi)
    mft, me = table.grid("n_mft"), table.grid("n_me")
    for k, n in enumerate(table.n_list):
        line = ax.plot(eta, me[k], "o-", ms=3, lw=1, label=f"ME N={n}")
        ax.plot(eta, mft[k], "--", lw=1, color=line[0].get_color())
    ax.set_xscale("log")
    ax.set_xlabel("pump rate eta (Hz)")
    ax.set_ylabel("<a+a>")
    ax.legend(frameon=False, fontsize=7, ncol=2)
    fig.tight_layout()
    return fig
