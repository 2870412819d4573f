import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from immersionlab.cli import main
from immersionlab.dynamics import get_system, integrate
from immersionlab.errors import ConfigError, UnsupportedOperation
from immersionlab.experiments import ExperimentConfig
from immersionlab.plotting import field_grid, render_phase_plot

SVG_NS = "{http://www.w3.org/2000/svg}"


def _svg_root(text):
    root = ET.fromstring(text)
    assert root.tag == SVG_NS + "svg"
    return root


# ---------------------------------------------------------------- config validation

pos = st.floats(1e-3, 10.0, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(tau=pos, N=st.integers(1, 10**5), degree=st.integers(1, 4), seed=st.integers(0, 99),
       quick=st.booleans(), lo=st.floats(-5, 0), width=st.floats(0, 5))
def test_config_round_trips(tau, N, degree, seed, quick, lo, width):
    raw = {"experiment": "learn", "system": "duffing", "seed": seed, "quick": quick, "output_dir": "x",
           "params": {"tau": tau, "N": N, "degree": degree, "m": 1, "box": [[lo, lo + width]] * 2}}
    cfg = ExperimentConfig.from_mapping(raw)
    again = ExperimentConfig.from_mapping(cfg.to_dict())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_hash_ignores_output_dir_only():
    a = ExperimentConfig.from_mapping({"experiment": "learn", "system": "duffing", "output_dir": "a"})
    b = ExperimentConfig.from_mapping({"experiment": "learn", "system": "duffing", "output_dir": "b"})
    c = ExperimentConfig.from_mapping({"experiment": "learn", "system": "duffing", "seed": 1})
    assert a.config_hash() == b.config_hash() != c.config_hash()


@pytest.mark.parametrize("raw", [
    {"experiment": "learn", "system": "duffing", "params": {"tau": 0}},
    {"experiment": "learn", "system": "duffing", "params": {"tau": -0.1}},
    {"experiment": "learn", "system": "duffing", "params": {"N": 0}},
    {"experiment": "basins", "system": "duffing", "params": {"resolution": 0}},
    {"experiment": "learn", "system": "nosuch"},
    {"experiment": "nosuch", "system": "duffing"},
    {"experiment": "learn", "system": "duffing", "params": {"horizon": 3}},
    {"experiment": "learn", "system": "duffing", "params": {"box": [[1, 0], [0, 1]]}},
    {"experiment": "learn", "system": "duffing", "params": {"box": [[0, 1]]}},
    {"experiment": "simulate", "system": "duffing", "params": {"xi": [1.0]}},
    {"experiment": "verify-immersion", "system": "duffing"},
    {"experiment": "learn", "system": "duffing", "params": {"degree": 1, "m": 4}},
    {"experiment": "reproduce-paper", "system": "duffing"},
    {"experiment": "learn"},
    {},
])
def test_invalid_configs_are_rejected(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping(raw)


def test_cli_config_error_exits_2_without_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["learn", "--system", "duffing", "--tau", "0", "--output", str(out)]) == 2
    assert not out.exists()
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"


def test_empty_config_file_exits_2(tmp_path):
    cfg = tmp_path / "empty.yaml"
    cfg.write_text("")
    assert main(["--config", str(cfg), "--output", str(tmp_path / "run")]) == 2
    assert not (tmp_path / "run").exists()


def test_runtime_error_writes_error_json(tmp_path):
    out = tmp_path / "run"
    rc = main(["simulate", "--system", "quadratic1d", "--xi", "1.5", "--horizon", "5", "--output", str(out)])
    assert rc == 1
    doc = json.loads((out / "error.json").read_text())
    assert doc["error"] == "IntegrationDiverged"


# ---------------------------------------------------------------- experiments through the CLI

def test_verify_immersion_on_cubic(tmp_path):
    out = tmp_path / "v"
    assert main(["run", "verify-immersion", "--system", "cubic1d", "--output", str(out)]) == 0
    doc = json.loads((out / "residuals.json").read_text())
    assert max(s["residual"] for s in doc["samples"]) <= 1e-6
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok"
    assert all((out / name).stat().st_size > 0 for name in man["outputs"])


def test_simulate_vanderpol_writes_csv_and_svg(tmp_path):
    out = tmp_path / "s"
    assert main(["simulate", "--system", "vanderpol", "--xi", "0.1,0", "--horizon", "20", "--output", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,x1,x2" and len(lines) == 1 + 20001
    _svg_root((out / "phase.svg").read_text())


def test_flags_override_the_config_file(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"experiment": "learn", "system": "decay1d", "seed": 3,
                                   "params": {"tau": 0.5, "N": 40, "degree": 1, "m": 1}}))
    out = tmp_path / "l"
    assert main(["--config", str(cfg), "--tau", "0.1", "--output", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["params"]["tau"] == 0.1
    assert man["config"]["params"]["N"] == 40 and man["config"]["seed"] == 3
    emb = json.loads((out / "embedding.json").read_text())
    assert emb["A"][0][0] == pytest.approx(-2.0, abs=1e-8)


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("IMMERSIONLAB_OUTPUT", str(tmp_path))
    assert main(["verify-immersion", "--system", "sine1d", "--quick"]) == 0
    assert (tmp_path / "verify-immersion_sine1d" / "manifest.json").is_file()


def test_basins_with_box_flag(tmp_path):
    out = tmp_path / "b"
    assert main(["basins", "--system", "cubic1d", "--box=-2,2", "--resolution", "9", "--output", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    for name in man["outputs"]:
        if name.endswith(".svg"):
            _svg_root((out / name).read_text())


def test_sweep_and_exclusion_quick(tmp_path):
    a, b = tmp_path / "sw", tmp_path / "ex"
    assert main(["sweep", "--system", "duffing", "--quick", "--tau-list", "0.1", "--N-list", "100,1000",
                 "--seeds", "2", "--degree", "2", "--m", "3", "--output", str(a)]) == 0
    assert (a / "collapse.csv").read_text().count("\n") == 5
    assert main(["exclusion", "--system", "quadratic1d", "--map", "exact", "--quick", "--seeds", "1",
                 "--output", str(b)]) == 0
    rows = (b / "exclusion.csv").read_text().splitlines()[1:]
    assert max(float(r.split(",")[2]) for r in rows) <= 1e-6


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "immersionlab", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "verify-immersion" in res.stdout


# ---------------------------------------------------------------- plotting

def test_duffing_phase_plot_with_field_and_trajectories():
    s = get_system("duffing")
    trajs = [integrate(s, x0, 10.0) for x0 in ([2, 0], [-2, 0], [0.1, 1], [-0.1, -1], [1.5, 1.5])]
    root = _svg_root(render_phase_plot(trajs, field_grid(s, s.seed_box), title="Duffing"))
    assert len(root.findall(f".//{SVG_NS}polyline")) == 5
    # one arrow per grid node except the equilibrium at the origin
    assert len(root.findall(f".//{SVG_NS}line")) == 15 * 15 - 1


def test_phase_plot_with_only_a_field():
    s = get_system("duffing")
    root = _svg_root(render_phase_plot([], field_grid(s, s.seed_box)))
    assert not root.findall(f".//{SVG_NS}polyline")


def test_lorenz_default_projection():
    traj = integrate(get_system("lorenz"), [1, 1, 1], 5.0)
    root = _svg_root(render_phase_plot([traj]))
    assert "x3" in ET.tostring(root, encoding="unicode")


def test_four_dimensional_plot_needs_a_projection():
    X = np.zeros((3, 4))
    with pytest.raises(UnsupportedOperation):
        render_phase_plot([X])
    _svg_root(render_phase_plot([X + np.arange(3)[:, None]], projection=(1, 3)))


def test_svg_is_deterministic():
    s = get_system("vanderpol")
    a = render_phase_plot([integrate(s, [0.1, 0], 5.0)], field_grid(s, s.seed_box))
    b = render_phase_plot([integrate(s, [0.1, 0], 5.0)], field_grid(s, s.seed_box))
    assert a == b
