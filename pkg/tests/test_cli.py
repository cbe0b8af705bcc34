import json

import numpy as np
import pytest

from memsolve.cli import main
from memsolve.waveform import Waveform

from conftest import FIG2_NETLIST, fig2_closed_form

POPULATION_SPEC = """\
family = volterra_population
a = 2
b = 0.001
k1 = "exp(-t)"
k2 = "exp(s)*s/(1+s)"
n0 = 1
"""

NONSEPARABLE_SPEC = """\
family = volterra_population
a = 2
b = 0.001
kernel = "exp(-t*s)"
n0 = 1
"""

BROKEN_SPEC = """\
family = volterra_population
a = 2
b = 0.001
k1 = "exp(-q)"
k2 = "1"
n0 = 1
"""


@pytest.fixture
def population_spec_file(tmp_path):
    path = tmp_path / "population.eq"
    path.write_text(POPULATION_SPEC)
    return str(path)


def test_compile_writes_netlist_and_manifest(tmp_path, population_spec_file, capsys):
    out = str(tmp_path / "population.net")
    assert main(["compile", population_spec_file, "-o", out]) == 0
    text = open(out).read()
    assert "memintegrator" in text
    assert text.count("memintegrator") == 1
    manifest = json.load(open(out + ".manifest.json"))
    assert manifest["command"] == "compile"
    assert manifest["config"]["family"] == "volterra_population"
    assert manifest["tool_version"]


def test_compile_malformed_expression_exits_2(tmp_path, capsys):
    spec = tmp_path / "broken.eq"
    spec.write_text(BROKEN_SPEC)
    assert main(["compile", str(spec), "-o", str(tmp_path / "x.net")]) == 2
    err = capsys.readouterr().err
    assert "line 4" in err


def test_compile_nonseparable_kernel_exits_3(tmp_path, capsys):
    spec = tmp_path / "nonsep.eq"
    spec.write_text(NONSEPARABLE_SPEC)
    assert main(["compile", str(spec), "-o", str(tmp_path / "x.net")]) == 3
    assert "kernel" in capsys.readouterr().err


def test_missing_file_exits_2(tmp_path):
    assert main(["compile", str(tmp_path / "ghost.eq"), "-o", str(tmp_path / "x.net")]) == 2


def test_simulate_fig2_matches_closed_form(tmp_path, capsys):
    net = tmp_path / "fig2.net"
    net.write_text(FIG2_NETLIST)
    out = str(tmp_path / "fig2.csv")
    assert main(["simulate", str(net), "--dt", "1e-3", "--t-end", "5", "-o", out]) == 0
    wf = Waveform.from_csv(out)
    i = wf.index_of_time(1.0)
    assert abs(wf.channel("out")[i] - fig2_closed_form(1.0)) < 1e-6
    stdout = capsys.readouterr().out
    assert "passivity warnings: 0" in stdout
    assert "ln clamps: 0" in stdout


def test_simulate_invalid_netlist_lists_all_diagnostics(tmp_path, capsys):
    net = tmp_path / "bad.net"
    net.write_text(
        "adder a1 out=n1 in=n2:1\nadder a2 out=n2 in=n1:1\npot p1 out=n3 in=n1 alpha=1.7\noutput n1\n"
    )
    assert main(["simulate", str(net), "-o", str(tmp_path / "x.csv")]) == 2
    err = capsys.readouterr().err
    assert "algebraic-loop" in err
    assert "alpha" in err


def test_simulate_blowup_exits_zero_with_manifest_note(tmp_path):
    net = tmp_path / "grow.net"
    net.write_text('memintegrator m out=v C=1 ic=1 g="-3" f="v" omega0=0\noutput v\n')
    out = str(tmp_path / "grow.csv")
    assert main(["simulate", str(net), "--dt", "0.01", "--t-end", "10", "-o", out]) == 0
    manifest = json.load(open(out + ".manifest.json"))
    assert manifest["config"]["truncated"] is True
    assert manifest["config"]["blowup_step"] is not None


def test_oracle_against_circuit(tmp_path, population_spec_file, capsys):
    net_path = str(tmp_path / "pop.net")
    sim_path = str(tmp_path / "pop.csv")
    ora_path = str(tmp_path / "ref.csv")
    assert main(["compile", population_spec_file, "-o", net_path]) == 0
    assert main(["simulate", net_path, "--dt", "1e-3", "--t-end", "2", "-o", sim_path]) == 0
    assert main([
        "oracle", population_spec_file, "--dt", "1e-3", "--t-end", "2",
        "-o", ora_path, "--against", sim_path,
    ]) == 0
    stdout = capsys.readouterr().out
    line = [l for l in stdout.splitlines() if "max relative deviation" in l][0]
    assert float(line.rsplit(":", 1)[1]) <= 0.01
    manifest = json.load(open(ora_path + ".manifest.json"))
    assert manifest["config"]["max_relative_deviation"] <= 0.01


def test_oracle_exponential_spec_matches_closed_form(tmp_path):
    spec = tmp_path / "exp.eq"
    spec.write_text('family = volterra_population\na = 1\nb = 0\nk1 = "0"\nk2 = "0"\nn0 = 1\n')
    out = str(tmp_path / "exp.csv")
    assert main(["oracle", str(spec), "--dt", "1e-3", "--t-end", "2", "-o", out]) == 0
    wf = Waveform.from_csv(out)
    assert np.max(np.abs(wf.channel("y") / np.exp(wf.t) - 1.0)) < 1e-6


def test_oracle_grid_mismatch_exits_2(tmp_path, population_spec_file):
    sim_path = str(tmp_path / "pop.csv")
    net_path = str(tmp_path / "pop.net")
    assert main(["compile", population_spec_file, "-o", net_path]) == 0
    assert main(["simulate", net_path, "--dt", "1e-3", "--t-end", "1", "-o", sim_path]) == 0
    assert main([
        "oracle", population_spec_file, "--dt", "2e-3", "--t-end", "1",
        "-o", str(tmp_path / "o.csv"), "--against", sim_path,
    ]) == 2


def test_oracle_higher_order_uses_chain_route(tmp_path):
    spec = tmp_path / "chain.eq"
    spec.write_text(
        'family = higher_order_single\nn = 2\ng = "1"\nf = "v"\nic[0] = 1\nic[1] = 0\n'
    )
    out = str(tmp_path / "chain.csv")
    assert main(["oracle", str(spec), "--dt", "1e-3", "--t-end", "3", "-o", out]) == 0
    wf = Waveform.from_csv(out)
    assert np.max(np.abs(wf.channel("y") - np.cos(wf.t))) < 1e-4


def test_oracle_linear_family_unsupported(tmp_path, capsys):
    spec = tmp_path / "lin.eq"
    spec.write_text("family = linear\nn = 1\nm = 1\na[1][1][1] = 1\na[1][1][0] = 1\nic[1][0] = 1\n")
    assert main(["oracle", str(spec), "-o", str(tmp_path / "x.csv")]) == 3


def test_stability_reports_terminal_mean(tmp_path, population_spec_file, capsys):
    net_path = str(tmp_path / "pop.net")
    assert main(["compile", population_spec_file, "-o", net_path, "--quiet"]) == 0
    out = str(tmp_path / "stab.csv")
    assert main([
        "stability", net_path, "--tolerance", "0.1", "--iterations", "5",
        "--seed", "7", "--dt", "5e-3", "--t-end", "1", "-o", out,
    ]) == 0
    stdout = capsys.readouterr().out
    assert "terminal mean relative error" in stdout
    lines = open(out).read().splitlines()
    assert lines[0] == "t,mean_rel_err,p10,p90"
    assert len(lines) == 202
    summary = open(out + ".summary.txt").read()
    assert "master_seed: 7" in summary


def test_stability_single_iteration_equals_its_error_series(tmp_path, population_spec_file):
    net_path = str(tmp_path / "pop.net")
    main(["compile", population_spec_file, "-o", net_path, "--quiet"])
    out = str(tmp_path / "one.csv")
    assert main([
        "stability", net_path, "--iterations", "1", "--seed", "3",
        "--dt", "5e-3", "--t-end", "1", "-o", out, "--quiet",
    ]) == 0
    body = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.array_equal(body[:, 1], body[:, 2])  # mean == p10 == p90 for one run
    assert np.array_equal(body[:, 1], body[:, 3])


def test_stability_zero_tolerance_zero_report(tmp_path, population_spec_file):
    net_path = str(tmp_path / "pop.net")
    main(["compile", population_spec_file, "-o", net_path, "--quiet"])
    out = str(tmp_path / "zero.csv")
    assert main([
        "stability", net_path, "--tolerance", "0", "--iterations", "3",
        "--dt", "5e-3", "--t-end", "1", "-o", out, "--quiet",
    ]) == 0
    body = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.all(body[:, 1:] == 0.0)


def test_stability_determinism_byte_identical(tmp_path, population_spec_file):
    net_path = str(tmp_path / "pop.net")
    main(["compile", population_spec_file, "-o", net_path, "--quiet"])
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    args = ["--tolerance", "0.1", "--iterations", "10", "--seed", "11",
            "--dt", "5e-3", "--t-end", "1", "--quiet"]
    assert main(["stability", net_path, *args, "-o", a]) == 0
    assert main(["stability", net_path, *args, "-o", b]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()


def test_convergence_command(tmp_path, population_spec_file, capsys):
    out = str(tmp_path / "conv.csv")
    assert main([
        "convergence", population_spec_file, "--dt-list", "4e-3,2e-3,1e-3",
        "--t-end", "2", "-o", out,
    ]) == 0
    stdout = capsys.readouterr().out
    assert "observed order" in stdout
    rows = open(out).read().splitlines()
    assert rows[0] == "dt,terminal,richardson"
    assert len(rows) == 4


def test_quiet_suppresses_info(tmp_path, population_spec_file, capsys):
    out = str(tmp_path / "q.net")
    assert main(["compile", population_spec_file, "-o", out, "--quiet"]) == 0
    assert capsys.readouterr().out == ""


def test_gnuplot_script_emission(tmp_path, population_spec_file):
    net_path = str(tmp_path / "pop.net")
    main(["compile", population_spec_file, "-o", net_path, "--quiet"])
    out = str(tmp_path / "pop.csv")
    assert main(["simulate", net_path, "--dt", "1e-2", "--t-end", "1",
                 "-o", out, "--gnuplot", "--quiet"]) == 0
    script = open(out + ".gp").read()
    assert f"plot '{out}' using 1:2" in script
    manifest = json.load(open(out + ".manifest.json"))
    assert out + ".gp" in manifest["outputs"]

    stab = str(tmp_path / "stab.csv")
    assert main(["stability", net_path, "--iterations", "2", "--dt", "1e-2",
                 "--t-end", "1", "-o", stab, "--gnuplot", "--quiet"]) == 0
    assert "p90" in open(stab + ".gp").read()


def test_duplicate_output_declaration_rejected(tmp_path, capsys):
    net = tmp_path / "dup.net"
    net.write_text("fgen f1 out=a expr=\"t\"\noutput a\noutput a\n")
    assert main(["simulate", str(net), "-o", str(tmp_path / "x.csv")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_backend_env_flag_selects_numpy(tmp_path, population_spec_file, monkeypatch):
    net_path = str(tmp_path / "pop.net")
    main(["compile", population_spec_file, "-o", net_path, "--quiet"])
    monkeypatch.setenv("MEMSOLVE_BACKEND", "numpy")
    out = str(tmp_path / "np.csv")
    assert main(["simulate", net_path, "--dt", "1e-2", "--t-end", "1", "-o", out, "--quiet"]) == 0
    manifest = json.load(open(out + ".manifest.json"))
    assert manifest["config"]["backend"] == "numpy"
