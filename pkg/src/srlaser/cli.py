"""Command-line entry point: ``srlaser <command> [options]``.

Configuration is layered: shipped preset < TOML file < ``--set`` overrides
< dedicated flags. Rates are ordinary frequency (Hz) unless given with an
``_angular`` suffix. Exit codes: 0 ok, 2 configuration, 3 numerical, 4 budget.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import export
from .errors import BudgetError, ConfigError, SRLaserError, ValidationError
from .model import (
    TWO_PI,
    PhysicalParams,
    angular_to_hz,
    cold_cavity_loss,
    derive,
    geometry_from_config,
    ion_number_estimate,
    linewidth_bad_cavity_haken,
    linewidth_bad_cavity_photon,
    linewidth_cooperativity,
    linewidth_schawlow_townes,
    load_preset,
    load_toml,
    material_from_config,
    params_from_config,
    preset_names,
    tomllib,
)

COMMANDS = ("derive", "dynamics", "steady", "spectrum", "sweep", "oracle", "compare")

# table -> allowed keys (None: validated by the model layer)
SCHEMA: dict[str, set[str] | None] = {
    "params": None,
    "cavity": None,
    "material": None,
    "laser": {"nu", "p_out", "nu_offset", "pop_excited", "pop_ground"},
    "dynamics": {"t_end", "tol", "samples", "initial", "eta_scan", "method", "plateau_band", "plateau_window"},
    "steady": {"method", "seed", "tol"},
    "spectrum": {"pad_factor", "window", "decay_floor", "dt", "t_max", "faithful_fig3", "max_samples"},
    "sweep": {"kind", "n_count", "n_min", "n_max", "eta_count", "eta_min", "eta_max", "spacing", "max_cells", "cell_timeout", "workers", "checkpoint"},
    "oracle": {"n_list", "eta_list", "eta_count", "eta_min", "eta_max", "n_fock", "max_fock", "method", "t_end", "samples", "max_dim"},
    "output": {"dir", "plot", "prefix"},
}
# keys that never change results and are left out of embedded configs
VOLATILE = {("sweep", "workers"), ("sweep", "checkpoint"), ("output", "dir")}


# --- configuration ---------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_override(item: str) -> tuple[list[str], Any]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like table.key=value")
    key, raw = item.split("=", 1)
    path = key.strip().split(".")
    if len(path) != 2 or not all(path):
        raise ConfigError(f"override key {key!r} must be table.key")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return path, value


def resolve_config(config_path: str | None = None, preset: str | None = None, overrides: list[str] | None = None) -> dict:
    """Merged and key-checked configuration tables."""
    file_cfg = load_toml(config_path) if config_path else {}
    preset = preset or file_cfg.pop("preset", None)
    file_cfg.pop("preset", None)
    cfg = load_preset(preset) if preset else {}
    cfg = _merge(cfg, file_cfg)
    for item in overrides or []:
        (table, key), value = _parse_override(item)
        cfg.setdefault(table, {})[key] = value
    for table, body in cfg.items():
        if table not in SCHEMA:
            raise ConfigError(f"unknown configuration table [{table}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{table}] must be a table")
        allowed = SCHEMA[table]
        if allowed is not None:
            unknown = set(body) - allowed
            if unknown:
                raise ConfigError(f"unknown keys in [{table}]: {sorted(unknown)}")
    if preset:
        cfg["preset"] = preset
    return cfg


def embedded(cfg: dict) -> dict:
    """Configuration as recorded in output files (volatile keys removed)."""
    out = {}
    for table, body in cfg.items():
        if isinstance(body, dict):
            out[table] = {k: v for k, v in body.items() if (table, k) not in VOLATILE}
        else:
            out[table] = body
    return out


def build_params(cfg: dict) -> PhysicalParams:
    if "params" not in cfg:
        raise ConfigError("configuration has no [params] table")
    return params_from_config(cfg["params"], cfg.get("cavity"))


def _table(cfg, name) -> dict:
    return dict(cfg.get(name, {}))


def _float(tbl, key, default=None):
    if key not in tbl:
        if default is None:
            raise ConfigError(f"missing '{key}'")
        return default
    try:
        v = float(tbl[key])
    except (TypeError, ValueError):
        raise ConfigError(f"'{key}' must be a number, got {tbl[key]!r}") from None
    if not math.isfinite(v):
        raise ValidationError(f"'{key}' must be finite")
    return v


def _int(tbl, key, default=None):
    v = _float(tbl, key, None if default is None else float(default))
    if v != int(v):
        raise ConfigError(f"'{key}' must be an integer")
    return int(v)


def _out_dir(cfg: dict, args) -> Path:
    out = getattr(args, "out", None) or _table(cfg, "output").get("dir") or "out"
    return Path(out)


def _prefix(cfg: dict) -> str:
    return str(_table(cfg, "output").get("prefix", ""))


def _want_plot(cfg, args) -> bool:
    return bool(getattr(args, "plot", False) or _table(cfg, "output").get("plot", False))


def _emit(obj) -> None:
    print(export.canonical_json(obj, indent=1))


# --- commands ----------------------------------------------------------------------


def cmd_derive(cfg: dict, args) -> dict:
    p = build_params(cfg)
    d = derive(p)
    report: dict[str, Any] = {"params_Hz": p.to_hz_dict(), "derived": d.to_dict()}
    report["derived"]["n_c1_gamma_Hz"] = angular_to_hz(d.n_c1_gamma)
    if "cavity" in cfg:
        report["cold_cavity_loss_angular"] = cold_cavity_loss(geometry_from_config(cfg["cavity"]))
    lw: dict[str, Any] = {
        "cooperativity_Hz": linewidth_cooperativity(d.c1, p.gamma),
        "bad_cavity_photon_Hz": linewidth_bad_cavity_photon(p.gamma, p.kappa, d.m_c),
    }
    laser = _table(cfg, "laser")
    mat = material_from_config(cfg["material"]) if "material" in cfg else None
    nu = laser.get("nu")
    if nu is None and mat is not None and mat.wavelength:
        nu = 299_792_458.0 / mat.wavelength
    if nu is not None and "p_out" in laser:
        nu = float(nu)
        p_out = _float(laser, "p_out")
        lw["schawlow_townes_Hz"] = linewidth_schawlow_townes(nu, p.kappa, p_out)
        lw["bad_cavity_haken_Hz"] = linewidth_bad_cavity_haken(
            nu + _float(laser, "nu_offset", 0.0), nu, p.kappa, p.gamma, p_out, _float(laser, "pop_excited", 1.0), _float(laser, "pop_ground", 0.0)
        )
    else:
        lw["schawlow_townes_Hz"] = None
        lw["bad_cavity_haken_Hz"] = None
        lw["note"] = "optical frequency and [laser] p_out needed for the power-based formulas"
    report["linewidths"] = lw
    report["unit_note"] = "rates in formulas are angular (rad/s); linewidths are FWHM in Hz using rate/2pi"
    if mat is not None:
        report["ion_number_estimate"] = ion_number_estimate(mat)
        report["excitation_volume_um3"] = mat.excitation_volume
    _emit(report)
    if args.out:
        export.write_json(_out_dir(cfg, args) / f"{_prefix(cfg)}derive.json", report, embedded(cfg))
    return report


def _initial_state(name: str):
    from .meanfield import MeanFieldState

    if name == "zero":
        return MeanFieldState.zeros()
    if name == "dark":
        return MeanFieldState.dark()
    if name == "excited":
        return MeanFieldState(0.0, 0j, 1.0, 0j)
    raise ConfigError(f"unknown initial state {name!r} (zero, dark, excited)")


def cmd_dynamics(cfg: dict, args) -> dict:
    from .meanfield import evolve, time_to_plateau

    p = build_params(cfg)
    dyn = _table(cfg, "dynamics")
    t_end = _float(dyn, "t_end")
    tol = _float(dyn, "tol", 1e-8)
    samples = _int(dyn, "samples", 401)
    scan = [float(x) for x in dyn.get("eta_scan", [angular_to_hz(p.eta)])]
    init = _initial_state(str(dyn.get("initial", "zero")))
    band = _float(dyn, "plateau_band", 1e-3)
    window = _float(dyn, "plateau_window", 0.0)
    out = _out_dir(cfg, args)
    trajs, summary = {}, []
    for eta_hz in scan:
        q = p.replace(eta=eta_hz * TWO_PI)
        tr = evolve(init, q, t_end, tol=tol, n_samples=samples, method=str(dyn.get("method", "LSODA")))
        label = f"eta={eta_hz:.6g}Hz"
        trajs[label] = tr
        plateau = time_to_plateau(tr, band, window=window)
        summary.append({"eta_Hz": eta_hz, "final": tr.final.to_dict(), "time_to_plateau_s": plateau})
        rows = [
            (t, v[0], v[1], v[2], v[3], v[4], v[5]) for t, v in zip(tr.times, tr.values)
        ]
        stem = f"{_prefix(cfg)}dynamics_eta{eta_hz:.6g}"
        export.write_csv(out / f"{stem}.csv", ["t", "n_photon", "re_coherence", "im_coherence", "sigma_z", "re_spin_corr", "im_spin_corr"], rows, embedded(cfg))
    report = {"runs": summary}
    export.write_json(out / f"{_prefix(cfg)}dynamics.json", report, embedded(cfg))
    if _want_plot(cfg, args):
        from .plots import dynamics_figure

        export.save_svg(dynamics_figure(trajs), out / f"{_prefix(cfg)}dynamics.svg", embedded(cfg))
    _emit(report)
    return report


def _steady_opts(cfg) -> dict:
    st = _table(cfg, "steady")
    opts = {}
    if "method" in st:
        opts["method"] = str(st["method"])
    if "seed" in st:
        opts["seed"] = str(st["seed"])
    if "tol" in st:
        opts["tol"] = _float(st, "tol")
    return opts


def cmd_steady(cfg: dict, args) -> dict:
    from .meanfield import residual_norm, stability_margin, steady_state

    p = build_params(cfg)
    ss = steady_state(p, **_steady_opts(cfg))
    report = {
        "params_Hz": p.to_hz_dict(),
        "steady_state": ss.to_dict(),
        "residual": residual_norm(ss, p),
        "stability_margin_per_s": stability_margin(ss, p),
        "stable": stability_margin(ss, p) < 0,
    }
    _emit(report)
    if args.out:
        export.write_json(_out_dir(cfg, args) / f"{_prefix(cfg)}steady.json", report, embedded(cfg))
    return report


def _spectrum_opts(cfg):
    from .spectrum import SpectrumOptions

    sp = _table(cfg, "spectrum")
    kw = {}
    for key in ("pad_factor", "max_samples"):
        if key in sp:
            kw[key] = _int(sp, key)
    for key in ("decay_floor", "dt", "t_max"):
        if key in sp:
            kw[key] = _float(sp, key)
    if "window" in sp:
        kw["window"] = str(sp["window"])
    if "faithful_fig3" in sp:
        kw["faithful_fig3"] = bool(sp["faithful_fig3"])
    return SpectrumOptions(**kw)


def cmd_spectrum(cfg: dict, args) -> dict:
    from .spectrum import linewidth

    p = build_params(cfg)
    res = linewidth(p, ss_opts=_steady_opts(cfg), spec_opts=_spectrum_opts(cfg))
    out = _out_dir(cfg, args)
    report = {
        "params_Hz": p.to_hz_dict(),
        "steady_state": res.steady.to_dict(),
        "fit": res.fit.to_dict(),
        "fwhm_Hz": res.fwhm,
        "slow_pole_fwhm_Hz": res.predicted_fwhm,
        "regression_eigenvalues": [complex(x) for x in res.modes.eigenvalues],
        "dt_s": res.trace.dt,
        "t_max_s": res.trace.t_max,
        "warnings": list(res.spectrum.warnings),
    }
    sel = np.abs(res.spectrum.freqs - res.fit.center) <= 50 * res.fwhm
    export.write_csv(out / f"{_prefix(cfg)}spectrum.csv", ["freq_Hz", "psd"], zip(res.spectrum.freqs[sel], res.spectrum.psd[sel]), embedded(cfg))
    export.write_json(out / f"{_prefix(cfg)}spectrum.json", report, embedded(cfg))
    if _want_plot(cfg, args):
        from .plots import spectrum_figure

        export.save_svg(spectrum_figure(res.spectrum, res.fit), out / f"{_prefix(cfg)}spectrum.svg", embedded(cfg))
    _emit(report)
    return report


def _grid_spec(cfg):
    from .sweep import GridSpec

    sw = _table(cfg, "sweep")
    return GridSpec(
        _int(sw, "n_count"),
        _float(sw, "n_min"),
        _float(sw, "n_max"),
        _int(sw, "eta_count"),
        _float(sw, "eta_min"),
        _float(sw, "eta_max"),
        str(sw.get("spacing", "log")),
        _int(sw, "max_cells", 10_000),
        _float(sw, "cell_timeout", 30.0),
    )


def _workers(cfg, args) -> int:
    from .sweep import WORKERS_ENV, default_workers

    if getattr(args, "workers", None):
        return int(args.workers)
    if os.environ.get(WORKERS_ENV):
        return default_workers()
    sw = _table(cfg, "sweep")
    if "workers" in sw:
        return _int(sw, "workers")
    return default_workers()


def write_sweep(grid, out: Path, prefix: str, config: dict, plot: bool = False) -> dict[str, str]:
    """Matrix CSVs (rows eta, columns N), a JSON manifest and optional SVG maps."""
    hashes = {}
    header = ["eta_Hz"] + [repr(float(n)) for n in grid.n_axis]
    quantities = ["n_photon", "inversion"] + (["fwhm_hz", "predicted_fwhm_hz", "fit_rms"] if grid.kind == "linewidth" else [])
    for q in quantities:
        mat = grid.matrix(q)
        rows = [[e] + [None if np.isnan(v) else v for v in row] for e, row in zip(grid.eta_axis_hz, mat)]
        hashes[q] = export.write_csv(out / f"{prefix}sweep_{q}.csv", header, rows, config)
    status = grid.status_matrix()
    hashes["status"] = export.write_csv(out / f"{prefix}sweep_status.csv", header, [[e] + list(r) for e, r in zip(grid.eta_axis_hz, status)], config)
    manifest = grid.to_dict()
    manifest["files"] = hashes
    hashes["manifest"] = export.write_json(out / f"{prefix}sweep.json", manifest, config)
    if plot:
        from .plots import sweep_figure

        for q in ("n_photon",) + (("fwhm_hz",) if grid.kind == "linewidth" else ()):
            export.save_svg(sweep_figure(grid, q), out / f"{prefix}sweep_{q}.svg", config)
    return hashes


def cmd_sweep(cfg: dict, args) -> dict:
    from .spectrum import SpectrumOptions
    from .sweep import run_sweep

    p = build_params(cfg)
    spec = _grid_spec(cfg)
    spec.check_budget()
    sw = _table(cfg, "sweep")
    kind = str(sw.get("kind", "photon"))
    grid = run_sweep(kind, spec, p, workers=_workers(cfg, args), spec_opts=_spectrum_opts(cfg) if kind == "linewidth" else None, checkpoint=sw.get("checkpoint"))
    hashes = write_sweep(grid, _out_dir(cfg, args), _prefix(cfg), embedded(cfg), _want_plot(cfg, args))
    report = {"status_counts": grid.status_counts(), "digest": grid.digest(), "files": hashes}
    _emit(report)
    return report


def _oracle_etas(cfg, p) -> list[float]:
    orc = _table(cfg, "oracle")
    if "eta_list" in orc:
        return [float(e) * TWO_PI for e in orc["eta_list"]]
    if "eta_count" in orc:
        from .sweep import axis

        return [float(e) * TWO_PI for e in axis(_int(orc, "eta_count"), _float(orc, "eta_min"), _float(orc, "eta_max"))]
    return [p.eta]


def cmd_oracle(cfg: dict, args) -> dict:
    from .dicke_oracle import DEFAULT_MAX_DIM, DensityState, DickeSpace, OracleParams, default_fock, me_evolve, me_steady_state
    from .meanfield import steady_state

    p = build_params(cfg)
    orc = _table(cfg, "oracle")
    n = int(round(p.n_atoms))
    if n < 1 or abs(n - p.n_atoms) > 1e-9:
        raise ValidationError("the master-equation oracle needs an integer n_atoms >= 1")
    n_mft = steady_state(p).n_photon
    nf = _int(orc, "n_fock", default_fock(n_mft, _int(orc, "max_fock", 16)))
    op = OracleParams.from_physical(p, nf)
    space = DickeSpace(n, nf)
    max_dim = _int(orc, "max_dim", DEFAULT_MAX_DIM)
    st = me_steady_state(op, space, str(orc.get("method", "direct")), max_dim=max_dim)
    report: dict[str, Any] = {
        "params_Hz": p.to_hz_dict(),
        "n_fock": nf,
        "me_steady": st.to_dict(),
        "mft_n_photon": n_mft,
        "ratio": st.n_photon / n_mft if n_mft > 0 else None,
    }
    out = _out_dir(cfg, args)
    if "t_end" in orc:
        t = np.linspace(0.0, _float(orc, "t_end"), _int(orc, "samples", 201))
        tr = me_evolve(op, space, DensityState.product(space, 0.0), t, max_dim=max_dim)
        export.write_csv(out / f"{_prefix(cfg)}oracle_dynamics.csv", ["t", "n_photon", "jz_per_atom"], zip(tr.times, tr.n_photon, tr.inversion_per_atom), embedded(cfg))
        report["me_final"] = tr.final.to_dict()
    export.write_json(out / f"{_prefix(cfg)}oracle.json", report, embedded(cfg))
    _emit(report)
    return report


def cmd_compare(cfg: dict, args) -> dict:
    from .dicke_oracle import compare_mft_me

    p = build_params(cfg)
    orc = _table(cfg, "oracle")
    n_list = [int(x) for x in orc.get("n_list", [int(round(p.n_atoms))])]
    etas = _oracle_etas(cfg, p)
    kw = {"max_fock": _int(orc, "max_fock", 16)}
    if "n_fock" in orc:
        kw["n_fock"] = _int(orc, "n_fock")
    table = compare_mft_me(p, n_list, etas, **kw)
    out = _out_dir(cfg, args)
    rows = [(r.n_atoms, r.eta / TWO_PI, r.n_mft, r.n_me, r.ratio, r.flagged, r.n_fock, r.fock_tail) for r in table.rows]
    export.write_csv(out / f"{_prefix(cfg)}compare.csv", ["n_atoms", "eta_Hz", "n_mft", "n_me", "ratio", "flagged", "n_fock", "fock_tail"], rows, embedded(cfg))
    report = table.to_dict()
    export.write_json(out / f"{_prefix(cfg)}compare.json", report, embedded(cfg))
    if _want_plot(cfg, args):
        from .plots import comparison_figure

        export.save_svg(comparison_figure(table), out / f"{_prefix(cfg)}compare.svg", embedded(cfg))
    _emit({"flagged": sum(r.flagged for r in table.rows), "rows": len(table.rows), "argmax_shift": report["argmax_shift"]})
    return report


HANDLERS = {
    "derive": cmd_derive,
    "dynamics": cmd_dynamics,
    "steady": cmd_steady,
    "spectrum": cmd_spectrum,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
    "compare": cmd_compare,
}


# --- planning ----------------------------------------------------------------------


def plan(command: str, cfg: dict) -> dict:
    """Validate everything a command needs and describe the work without doing it."""
    p = build_params(cfg)
    info: dict[str, Any] = {"command": command, "params_Hz": p.to_hz_dict()}
    if command == "derive":
        derive(p)
        if "material" in cfg:
            material_from_config(cfg["material"])
    elif command == "dynamics":
        dyn = _table(cfg, "dynamics")
        _initial_state(str(dyn.get("initial", "zero")))
        info["runs"] = len(dyn.get("eta_scan", [1]))
        info["t_end"] = _float(dyn, "t_end")
    elif command == "spectrum":
        info["spectrum_options"] = _spectrum_opts(cfg).__dict__
    elif command == "sweep":
        spec = _grid_spec(cfg)
        spec.check_budget()
        info["cells"] = spec.size
        info["kind"] = str(_table(cfg, "sweep").get("kind", "photon"))
        if info["kind"] not in ("photon", "linewidth"):
            raise ConfigError(f"unknown sweep kind {info['kind']!r}")
    elif command in ("oracle", "compare"):
        from .dicke_oracle import DEFAULT_MAX_DIM, DickeSpace

        orc = _table(cfg, "oracle")
        ns = [int(x) for x in orc.get("n_list", [int(round(p.n_atoms))])] if command == "compare" else [int(round(p.n_atoms))]
        nf = _int(orc, "n_fock", _int(orc, "max_fock", 16))
        dims = {n: DickeSpace(n, nf).vector_dim for n in ns}
        cap = _int(orc, "max_dim", DEFAULT_MAX_DIM)
        if max(dims.values()) > cap:
            raise BudgetError(f"Liouvillian dimension {max(dims.values())} exceeds cap {cap}")
        info["max_liouvillian_dim"] = max(dims.values())
        if command == "compare":
            info["cells"] = len(ns) * len(_oracle_etas(cfg, p))
    return info


# --- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="TOML configuration file")
    common.add_argument("-p", "--preset", help=f"shipped preset name")
    common.add_argument("-s", "--set", dest="overrides", action="append", default=[], metavar="TABLE.KEY=VALUE", help="override one configuration value")
    common.add_argument("-o", "--out", help="output directory")
    common.add_argument("--plot", action="store_true", help="also write SVG figures")
    common.add_argument("--workers", type=int, help="worker processes for sweeps")
    common.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    parser = argparse.ArgumentParser(prog="srlaser", description="Superradiant-laser mean-field, spectrum and master-equation tools.")
    parser.add_argument("--list-presets", action="store_true", help="print shipped presets and exit")
    sub = parser.add_subparsers(dest="command")
    helps = {
        "derive": "cooperativities, critical numbers, linewidth formulas, ion count",
        "dynamics": "time evolution of the mean-field moments",
        "steady": "mean-field steady state",
        "spectrum": "emission spectrum and Lorentzian linewidth",
        "sweep": "(N, eta) photon-number or linewidth map",
        "oracle": "master-equation steady state (and optional dynamics) at small N",
        "compare": "mean-field versus master-equation photon numbers",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list_presets:
        print("\n".join(preset_names()))
        return 0
    if not args.command:
        parser.print_help(sys.stderr)
        return 2
    try:
        if args.workers is not None and args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        cfg = resolve_config(args.config, args.preset, args.overrides)
        if args.dry_run:
            _emit({"plan": plan(args.command, cfg), "config": cfg})
            return 0
        HANDLERS[args.command](cfg, args)
    except SRLaserError as exc:
        print(f"srlaser: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
