import csv
import json

import numpy as np
import pytest

from jfnkgw.sim.cli import main
from jfnkgw.sim.compare import CompareError, compare_runs, field_errors
from jfnkgw.sim.config import ConfigError, builtin_names, parse_config, parse_config_text
from jfnkgw.sim.driver import (NonConvergenceError, SimulationError, RunArtifacts, build_model,
                               run_simulation, snapshot_steps, yearly_steps)
from jfnkgw.sim.io import (HEAD_COLUMNS, LOG_COLUMNS, load_run, read_head_csv, write_convergence_log,
                           write_head_csv, write_heads, write_run)

SMALL_FD = """
[scenario]
kind = custom
model = fd

[mesh]
nx = 6
ny = 5
dx = 1500
dy = 1500

[layer1]
K = 100
S_y = 0.25
z = 0
Z = 500
h0 = 400

[boundary]
left = head 50
right = head 400

[time]
dt = 1
n_steps = 5
"""

SMALL_FE = """
[scenario]
kind = custom
model = fe

[mesh]
nx = 3
ny = 3
dx = 6000
dy = 6000

[layer1]
K = 100
S_y = 0.25
S_o = 1e-6
z = 200
Z = 500
h0 = 250

[layer2]
K = 100
S_y = 0.25
S_o = 1e-6
z = 0
Z = 170
h0 = 250

[aquitard]
K_v = 1e-3
D = 30

[pumps]
well = 5 1 -2000000

[time]
dt = 1
n_steps = 4
"""


def write_cfg(tmp_path, text, name="case.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ------------------------------------------------------------------ config

def test_builtin_tc1():
    cfg = parse_config("tc1")
    assert (cfg.nx, cfg.ny, cfg.dx, cfg.dy) == (81, 81, 1500.0, 1500.0)
    lc = cfg.layers[0]
    assert (lc.K, lc.S_y, lc.z, lc.Z, lc.h0) == (100.0, 0.25, 0.0, 500.0, 400.0)
    assert (cfg.dt, cfg.n_steps) == (1.0, 1461)
    assert cfg.boundary.left == ("head", 50.0) and cfg.boundary.right == ("head", 400.0)
    assert cfg.boundary.top == ("flux", 0.0)


def test_builtin_tc2():
    cfg = parse_config("tc2")
    model, h0 = build_model(cfg)
    assert model.n_unknowns == 882 and np.all(h0 == 250.0)
    assert cfg.aquitard == (1e-3, 30.0)
    assert {(p.cell, p.layer, p.rate) for p in cfg.pumps} == {(210, 1, -13068000.0), (210, 2, -13068000.0)}
    assert builtin_names() == ["tc1", "tc2"]


def test_builtin_kind_with_overrides(tmp_path):
    cfg = parse_config(write_cfg(tmp_path, "[scenario]\nkind = tc1\n[time]\nn_steps = 7\n"
                                           "[solver]\nmethod = nk\n"))
    assert cfg.n_steps == 7 and cfg.nx == 81 and cfg.solver.method == "nk"
    assert cfg.solver.uses_preconditioner and not cfg.solver.uses_line_search


@pytest.mark.parametrize("text, fragment", [
    ("", "empty config"),
    ("[scenario]\nmodel = fd\n", "scenario.kind"),
    ("[scenario]\nkind = tc1\n[mesh]\nnx = -3\n", "mesh.nx"),
    ("[scenario]\nkind = tc1\n[mesh]\nspacing = 3\n", "mesh.spacing"),
    ("[scenario]\nkind = tc1\n[weather]\nrain = 1\n", "[weather]"),
    ("[scenario]\nkind = tc1\n[solver]\nmethod = bfgs\n", "solver.method"),
    ("[scenario]\nkind = tc1\n[boundary]\nleft = dirichlet 3\n", "boundary.left"),
    ("[scenario]\nkind = tc2\n[pumps]\nw = 210 1\n", "pumps.w"),
    ("[scenario]\nkind = tc2\n[pumps]\nw = 999 1 -5\n", "pumps.w"),
    ("[scenario]\nkind = tc1\nmodel = fe\n", "conflicts"),
    ("[scenario]\nkind = tc1\n[layer2]\nK = 1\n", "[layer2]"),
    ("[scenario]\nkind = tc2\n[boundary]\nleft = head 3\n", "[boundary]"),
    ("[scenario]\nkind = tc1\n[layer1]\nZ = -1\n", "layer1.Z"),
    ("[scenario]\nkind = tc1\n[solver]\nmethod = jfnk\npreconditioner = true\n", "preconditioner"),
    ("no section header\n", "<string>"),
])
def test_config_errors_name_the_key(text, fragment):
    with pytest.raises(ConfigError, match=fragment.replace("[", r"\[").replace("]", r"\]")):
        parse_config_text(text)


def test_missing_required_key():
    with pytest.raises(ConfigError, match="layer1.S_y"):
        parse_config_text(SMALL_FD.replace("S_y = 0.25\n", ""))


def test_unknown_config_path():
    with pytest.raises(ConfigError, match="missing.cfg"):
        parse_config("missing.cfg")


def test_to_ini_round_trip():
    for cfg in (parse_config("tc1"), parse_config("tc2").with_overrides(method="nk").with_steps(3),
                parse_config_text(SMALL_FE)):
        again = parse_config_text(cfg.to_ini())
        assert again == cfg


def test_overrides_validated():
    cfg = parse_config_text(SMALL_FD)
    with pytest.raises(ConfigError):
        cfg.with_steps(-1)
    assert cfg.with_overrides(method="nk").solver.method == "nk"
    assert cfg.solver.method == "jfnk"


# ------------------------------------------------------------------ driver

def test_snapshot_steps():
    cfg = parse_config("tc1")
    assert yearly_steps(cfg) == [365, 730, 1096, 1461]
    assert snapshot_steps(cfg) == [0, 365, 730, 1096, 1461]
    assert snapshot_steps(cfg.with_steps(10)) == [0, 10]
    assert snapshot_steps(parse_config_text(SMALL_FD.replace("n_steps = 5", "n_steps = 5\nsnapshot_every = 2"))) \
        == [0, 2, 4, 5]


def test_zero_step_run_holds_only_initial_condition():
    cfg = parse_config_text(SMALL_FD).with_steps(0)
    art = run_simulation(cfg)
    assert list(art.snapshots) == [0] and art.steps_completed == 0
    assert np.all(art.final_heads == 400.0) and art.residual_calls == 0


@pytest.mark.parametrize("method", ["nk", "jfnk"])
def test_small_runs_converge(method):
    for text in (SMALL_FD, SMALL_FE):
        art = run_simulation(parse_config_text(text).with_overrides(method=method))
        assert art.steps_completed == parse_config_text(text).n_steps
        assert art.nonconverged_steps == []
        for rep in art.reports:
            assert rep.per_iteration[-1].norm_step <= 1e-4


def test_fd_dirichlet_heads_reached():
    art = run_simulation(parse_config_text(SMALL_FD))
    h = art.final_heads.reshape(5, 6)
    assert np.allclose(h[:, 0], 50.0, atol=1e-9) and np.allclose(h[:, -1], 400.0, atol=1e-9)


def test_abort_policy_raises_with_artifacts():
    cfg = parse_config_text(SMALL_FD).with_overrides(max_newton=1, on_nonconvergence="abort")
    with pytest.raises(NonConvergenceError) as exc:
        run_simulation(cfg)
    assert exc.value.step == 1
    assert exc.value.artifacts.steps_completed == 1


def test_continue_policy_marks_steps():
    cfg = parse_config_text(SMALL_FD).with_overrides(max_newton=1)
    art = run_simulation(cfg)
    assert art.steps_completed == 5 and 1 in art.nonconverged_steps


def test_nonfinite_initial_state():
    cfg = parse_config_text(SMALL_FD)
    h0 = np.full(30, 400.0)
    h0[3] = np.nan
    with pytest.raises(SimulationError):
        run_simulation(cfg, h0=h0)
    with pytest.raises(ValueError):
        run_simulation(cfg, h0=np.ones(4))


# -------------------------------------------------------------------- I/O

def test_two_node_csv_has_three_lines(tmp_path):
    p = tmp_path / "h.csv"
    write_heads(p, [1, 2], [0.0, 1.0], [0.0, 0.0], [1, 1], [10.0, 11.5])
    lines = p.read_bytes().split(b"\n")
    assert lines[-1] == b"" and len(lines) == 4       # header + 2 rows, LF terminated
    assert lines[0].decode() == ",".join(HEAD_COLUMNS)


def test_head_csv_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    heads = rng.uniform(-1e3, 1e3, 50) * 10.0 ** rng.integers(-8, 8, 50)
    heads[:3] = [0.1 + 0.2, 1 / 3, 2 ** -1074]
    ids = np.arange(1, 51)
    p = tmp_path / "h.csv"
    write_heads(p, ids, ids * 1.5, ids * 0.1, np.ones(50, int), heads)
    r_ids, x, y, layer, back = read_head_csv(p)
    assert np.array_equal(r_ids, ids) and np.array_equal(back.view(np.int64), heads.view(np.int64))
    assert np.array_equal(y, ids * 0.1)


def test_convergence_log_accounting(tmp_path):
    art = run_simulation(parse_config_text(SMALL_FE))
    p = tmp_path / "conv.csv"
    write_convergence_log(art, p)
    with p.open() as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == LOG_COLUMNS
    assert len(rows) == int(art.newton_iterations.sum())
    assert int(rows[-1]["cumulative_residual_calls"]) == art.residual_calls
    step1 = [r for r in rows if r["step"] == "1"]
    assert len(step1) == art.reports[0].newton_iterations
    assert float(step1[-1]["norm_step"]) <= 1e-4


def test_write_and_load_run(tmp_path):
    art = run_simulation(parse_config_text(SMALL_FD))
    out = write_run(art, tmp_path / "run")
    names = {p.name for p in out.iterdir()}
    assert {"config.ini", "summary.json", "heads_final.csv", "convergence.csv", "steps.csv",
            "heads_step_00000.csv", "heads_step_00005.csv"} <= names
    stored = load_run(out)
    assert np.array_equal(stored.final_heads, art.final_heads)
    assert stored.residual_calls == art.residual_calls
    assert stored.config == art.config
    assert sorted(stored.snapshots) == [0, 5]


def test_write_head_csv_at_snapshot(tmp_path):
    art = run_simulation(parse_config_text(SMALL_FD))
    write_head_csv(art, tmp_path / "h0.csv", 0)
    assert np.all(read_head_csv(tmp_path / "h0.csv")[4] == 400.0)


# ---------------------------------------------------------------- compare

def test_self_compare_is_zero():
    art = run_simulation(parse_config_text(SMALL_FE))
    rep = compare_runs(art, art)
    assert rep.call_ratio == 1.0
    assert np.all(rep.final.abs_error == 0) and np.all(rep.final.rel_error == 0)
    for e in rep.snapshots.values():
        assert e.max_abs == 0.0


def test_relative_error_flags_near_zero():
    e = field_errors([0.0, 1e-9, 2.0], [1.0, 0.0, 1.0])
    assert list(e.near_zero) == [True, True, False]
    assert np.isnan(e.rel_error[0]) and e.rel_error[2] == 0.5
    assert e.abs_error[0] == 1.0 and e.max_rel == 0.5


def test_compare_geometry_mismatch():
    a = run_simulation(parse_config_text(SMALL_FD).with_steps(1))
    b = run_simulation(parse_config_text(SMALL_FD.replace("nx = 6", "nx = 7")).with_steps(1))
    with pytest.raises(CompareError):
        compare_runs(a, b)
    c = run_simulation(parse_config_text(SMALL_FD).with_steps(2))
    with pytest.raises(CompareError, match="time stepping"):
        compare_runs(a, c)


def test_nk_and_jfnk_agree_on_small_fd():
    cfg = parse_config_text(SMALL_FD)
    a = run_simulation(cfg.with_overrides(method="nk"))
    b = run_simulation(cfg.with_overrides(method="jfnk"))
    rep = compare_runs(a, b)
    assert rep.final.max_abs <= 5e-3
    assert rep.call_ratio > 1.0


def test_tighter_tolerance_brings_methods_together():
    cfg = parse_config("tc1").with_steps(1)
    gaps = []
    for tau in (1e-2, 1e-4, 1e-7):
        a = run_simulation(cfg.with_overrides(method="nk", tau_h=tau))
        b = run_simulation(cfg.with_overrides(method="jfnk", tau_h=tau))
        gaps.append(np.max(np.abs(a.final_heads - b.final_heads)))
    assert gaps[2] <= gaps[0] and gaps[2] <= 1e-5


# -------------------------------------------------------------------- CLI

def test_cli_run_compare_and_determinism(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL_FD)
    assert main(["run", str(cfg), "--method", "nk", "--out", str(tmp_path / "nk")]) == 0
    assert main(["run", str(cfg), "--method", "jfnk", "--out", str(tmp_path / "j1")]) == 0
    assert main(["run", str(cfg), "--method", "jfnk", "--out", str(tmp_path / "j2")]) == 0
    for name in ("heads_final.csv", "heads_step_00005.csv", "convergence.csv"):
        assert (tmp_path / "j1" / name).read_bytes() == (tmp_path / "j2" / name).read_bytes()
    capsys.readouterr()
    out = tmp_path / "errors.csv"
    assert main(["compare", str(tmp_path / "nk"), str(tmp_path / "j1"), "--out", str(out)]) == 0
    assert "call ratio" in capsys.readouterr().out
    summary = json.loads((tmp_path / "errors_summary.json").read_text())
    nk_calls = json.loads((tmp_path / "nk" / "summary.json").read_text())["residual_calls"]
    j_calls = json.loads((tmp_path / "j1" / "summary.json").read_text())["residual_calls"]
    assert summary["call_ratio"] == pytest.approx(j_calls / nk_calls)
    with out.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 30 and "rel_error" in rows[0]
    assert (tmp_path / "errors_snapshots.csv").exists()


def test_cli_steps_override(tmp_path):
    assert main(["run", "tc2", "--steps", "1", "--out", str(tmp_path / "o")]) == 0
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["steps_completed"] == 1 and s["method"] == "jfnk"


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["run", "missing.cfg", "--out", str(tmp_path / "o")]) == 1
    assert "missing.cfg" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["run", "tc1"]) == 1                      # --out is required
    assert main(["run", "tc1", "--method", "bfgs", "--out", "x"]) == 1
    empty = write_cfg(tmp_path, "", "empty.ini")
    assert main(["run", str(empty), "--out", str(tmp_path / "o")]) == 1
    assert main(["frobnicate"]) == 1


def test_cli_abort_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL_FD + "[solver]\nmax_newton = 1\n")
    code = main(["run", str(cfg), "--abort-on-nonconvergence", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "step 1" in capsys.readouterr().err
    assert load_run(tmp_path / "o").summary["steps_completed"] == 1


def test_cli_io_errors(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "tc1", "--steps", "0", "--out", str(blocker / "sub")]) == 3
    assert main(["compare", str(tmp_path / "nope"), str(tmp_path / "nope"), "--out", "e.csv"]) == 3


def test_cli_compare_mismatch_is_usage_error(tmp_path):
    a = write_cfg(tmp_path, SMALL_FD, "a.ini")
    b = write_cfg(tmp_path, SMALL_FD.replace("nx = 6", "nx = 7"), "b.ini")
    assert main(["run", str(a), "--steps", "1", "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(b), "--steps", "1", "--out", str(tmp_path / "b")]) == 0
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b"), "--out",
                 str(tmp_path / "e.csv")]) == 1


def test_cli_scenarios(capsys):
    assert main(["scenarios"]) == 0
    out = capsys.readouterr().out
    assert "tc1" in out and "6561 unknowns" in out and "882 unknowns" in out


def test_run_artifacts_defaults():
    art = RunArtifacts(parse_config_text(SMALL_FD), np.arange(1, 3), np.zeros(2), np.zeros(2), np.ones(2))
    assert art.steps_completed == 0 and art.residual_calls == 0 and art.nonconverged_steps == []
