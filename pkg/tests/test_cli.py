import json

import pytest

from srlaser import cli
from srlaser.errors import ConfigError


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def files(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_list_presets(capsys):
    code, out, _ = run(capsys, "--list-presets")
    assert code == 0 and "fig2" in out.split()


def test_derive_fig2(capsys, tmp_path):
    code, out, _ = run(capsys, "derive", "-p", "fig2", "-o", str(tmp_path))
    rep = json.loads(out)
    assert code == 0
    assert rep["derived"]["c1"] == pytest.approx(1.96e-7, rel=1e-12)
    assert rep["derived"]["n_crit"] == pytest.approx(1.0204e9, rel=1e-4)
    assert rep["linewidths"]["cooperativity_Hz"] == pytest.approx(6.2389e-3, rel=1e-4)


def test_derive_er_preset(capsys):
    code, out, _ = run(capsys, "derive", "-p", "er_liyf4")
    rep = json.loads(out)
    assert code == 0
    assert rep["ion_number_estimate"] == pytest.approx(2.945243e9, rel=1e-6)
    assert rep["derived"]["c1"] == pytest.approx(1e-8, rel=1e-9)
    assert rep["linewidths"]["schawlow_townes_Hz"] > 0


def test_lossless_preset_rejected(capsys):
    code, _, err = run(capsys, "derive", "-p", "lossless")
    assert code == 2 and "kappa" in err


@pytest.mark.parametrize(
    "argv,code",
    [
        (["derive", "-p", "nope"], 2),
        (["derive", "-p", "fig2", "-s", "params.bogus=1"], 2),
        (["derive", "-p", "fig2", "-s", "nonsense"], 2),
        (["derive", "-p", "fig2", "-s", "weird.key=1"], 2),
        (["sweep", "-p", "fig2", "-s", "sweep.n_count=0"], 2),
        (["sweep", "-p", "fig2", "-s", "sweep.max_cells=10"], 4),
        (["sweep", "-p", "fig2", "--workers", "0"], 2),
        (["spectrum", "-p", "fig2", "-s", "spectrum.max_samples=1000"], 4),
        (["oracle", "-p", "figS1", "-s", "oracle.max_dim=100"], 4),
        (["steady", "-p", "fig2", "-s", "params.gamma=-1"], 2),
    ],
)
def test_exit_codes(capsys, tmp_path, argv, code):
    got, _, err = run(capsys, *argv, "-o", str(tmp_path))
    assert got == code
    assert err.startswith("srlaser: error:")


def test_missing_config_file(capsys, tmp_path):
    code, _, err = run(capsys, "steady", "-c", str(tmp_path / "none.toml"))
    assert code == 2 and "cannot read" in err
    bad = tmp_path / "bad.toml"
    bad.write_text("[params\n")
    assert run(capsys, "steady", "-c", str(bad))[0] == 2


def test_config_precedence(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text('preset = "fig2"\n[params]\ngamma = 2e5\n')
    cfg = cli.resolve_config(str(f), None, ["params.gamma=3e5"])
    assert cfg["params"]["gamma"] == 3e5
    assert cfg["params"]["kappa"] == 1e8  # from the preset
    cfg = cli.resolve_config(str(f), None, [])
    assert cfg["params"]["gamma"] == 2e5
    with pytest.raises(ConfigError):
        cli.resolve_config(None, "fig2", ["dynamics.t_endd=1"])


def test_dry_run_does_no_work(capsys, tmp_path):
    out_dir = tmp_path / "out"
    code, out, _ = run(capsys, "sweep", "-p", "fig2", "-o", str(out_dir), "--dry-run")
    assert code == 0
    assert json.loads(out)["plan"]["cells"] == 3600
    assert not out_dir.exists()


def test_steady_and_spectrum_files(capsys, tmp_path):
    assert run(capsys, "steady", "-p", "fig2", "-o", str(tmp_path))[0] == 0
    code, out, _ = run(capsys, "spectrum", "-p", "fig2", "-o", str(tmp_path), "--plot")
    assert code == 0
    names = files(tmp_path)
    assert {"steady.json", "spectrum.csv", "spectrum.json", "spectrum.svg"} <= set(names)
    doc = json.loads(names["spectrum.json"])
    assert doc["config"]["params"]["kappa"] == 1e8
    assert len(doc["sha256"]) == 64


def test_dynamics_rerun_is_byte_identical(capsys, tmp_path):
    args = ["dynamics", "-p", "fig2", "-s", "dynamics.t_end=2e-6", "-s", "dynamics.samples=51", "--plot"]
    assert run(capsys, *args, "-o", str(tmp_path / "a"))[0] == 0
    assert run(capsys, *args, "-o", str(tmp_path / "b"))[0] == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b and any(n.endswith(".csv") for n in a)


def test_sweep_golden_rerun(capsys, tmp_path):
    args = ["sweep", "-p", "fig2", "-s", "sweep.n_count=3", "-s", "sweep.eta_count=3", "-s", "sweep.kind='linewidth'", "--plot"]
    assert run(capsys, *args, "-o", str(tmp_path / "a"), "--workers", "1")[0] == 0
    assert run(capsys, *args, "-o", str(tmp_path / "b"), "--workers", "2")[0] == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b
    assert {"sweep.json", "sweep_fwhm_hz.csv", "sweep_status.csv", "sweep_n_photon.svg"} <= set(a)


def test_workers_env(monkeypatch, capsys, tmp_path):
    monkeypatch.setenv("SRLASER_WORKERS", "x")
    code, _, err = run(capsys, "sweep", "-p", "fig2", "-s", "sweep.n_count=1", "-s", "sweep.eta_count=1", "-o", str(tmp_path))
    assert code == 2 and "SRLASER_WORKERS" in err


def test_oracle_and_compare(capsys, tmp_path):
    code, out, _ = run(capsys, "oracle", "-p", "figS1", "-s", "params.n_atoms=3", "-s", "oracle.t_end=1e-5", "-o", str(tmp_path))
    assert code == 0
    code, out, _ = run(
        capsys, "compare", "-p", "figS1", "-s", "oracle.n_list=[2, 3]", "-s", "oracle.eta_count=2", "-o", str(tmp_path), "--plot"
    )
    assert code == 0
    assert json.loads(out)["rows"] == 4
    assert {"oracle.json", "compare.csv", "compare.json", "compare.svg"} <= set(files(tmp_path))


def test_no_command(capsys):
    assert run(capsys)[0] == 2
