import csv
import io
import subprocess
import sys

import pytest

from semsim.cli import main
from semsim.report import format_value, plot_lines, to_csv


def _run(argv, tmp_path, capsys):
    rc = main(argv + ["--out", str(tmp_path)])
    cap = capsys.readouterr()
    return rc, cap.out, cap.err


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_overhead_exact(tmp_path, capsys):
    rc, out, _ = _run(["overhead", "64", "8", "2", "2"], tmp_path, capsys)
    assert rc == 0
    assert out.splitlines() == ["block,counter,mac,hash,fraction", "64,8,2,2,0.16015625"]
    assert (tmp_path / "overhead.csv").read_text() == out


def test_overhead_flags_override(tmp_path, capsys):
    rc, out, _ = _run(["overhead", "--hash", "0"], tmp_path, capsys)
    assert rc == 0 and out.splitlines()[1] == "64,8,2,0,0.15625"


def test_overhead_bad_arity(tmp_path, capsys):
    rc, _, err = _run(["overhead", "64", "8"], tmp_path, capsys)
    assert rc == 1 and "four sizes" in err


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    rc, _, err = _run(["run", "--bogus"], tmp_path, capsys)
    assert rc == 1 and "--bogus" in err


def test_missing_subcommand(capsys):
    assert main([]) == 1


def test_run_synthetic(tmp_path, capsys):
    rc, out, _ = _run(["run", "--nodes", "4", "--miss-rate", "0.1", "--instrs-per-node", "400",
                       "--scheme", "sdsm"], tmp_path, capsys)
    assert rc == 0
    (row,) = _rows(out)
    assert row["scheme"] == "sdsm" and row["nodes"] == "4" and row["completed"] == "1"


def test_run_is_byte_deterministic(tmp_path, capsys):
    argv = ["run", "--nodes", "4", "--miss-rate", "0.05", "--instrs-per-node", "500"]
    _, a, _ = _run(argv, tmp_path, capsys)
    _, b, _ = _run(argv, tmp_path, capsys)
    assert a == b


def test_run_trace_file_and_config(tmp_path, capsys):
    trace = tmp_path / "t.trace"
    trace.write_text("#thread 0\nS 0x40\nA\n#thread 1\nA\nA\nL 0x40\n")
    cfg = tmp_path / "c.yaml"
    cfg.write_text("scheme: none\nmem_cycles: 50\n")
    rc, out, _ = _run(["run", "--workload", str(trace), "--config", str(cfg)], tmp_path, capsys)
    assert rc == 0
    (row,) = _rows(out)
    assert row["scheme"] == "none" and row["instructions"] == "5"


def test_run_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("warp_drive: 9\n")
    rc, _, err = _run(["run", "--config", str(cfg)], tmp_path, capsys)
    assert rc == 1 and "warp_drive" in err


def test_run_bad_trace(tmp_path, capsys):
    trace = tmp_path / "t.trace"
    trace.write_text("#thread 0\nQ 1\n")
    rc, _, err = _run(["run", "--workload", str(trace)], tmp_path, capsys)
    assert rc == 1 and "line 2" in err


def test_sweep_small(tmp_path, capsys):
    rc, out, _ = _run(["sweep", "--nodes", "4,8", "--miss-rate", "0.1", "--misses-per-node", "10"],
                      tmp_path, capsys)
    assert rc == 0
    rows = _rows(out)
    assert {(r["nodes"], r["scheme"]) for r in rows} == {
        (n, s) for n in ("4", "8") for s in ("none", "sdsm", "baseline16")}
    for r in rows:
        if r["scheme"] == "none":
            assert float(r["overhead_pct"]) == 0


def test_sweep_rejects_unknown_scheme(tmp_path, capsys):
    rc, _, _ = _run(["sweep", "--schemes", "rot13"], tmp_path, capsys)
    assert rc == 1


def test_amat_grids(tmp_path, capsys):
    rc, out, _ = _run(["amat"], tmp_path, capsys)
    assert rc == 0
    header = out.splitlines()[0]
    assert header == ("variant,H,t_c,t_coh,t_fetch,t_int_miss,t_rem_mult,node_miss,"
                      "amat_baseline,amat_dit,overhead_pct")
    assert max(float(r["overhead_pct"]) for r in _rows(out)) < 1
    rc, out, _ = _run(["amat", "--grid", "coherence"], tmp_path, capsys)
    assert min(float(r["overhead_pct"]) for r in _rows(out)) < 0


def test_amat_custom(tmp_path, capsys):
    rc, out, _ = _run(["amat", "--grid", "custom", "--node-miss", "0.5", "--int-miss", "0.01",
                       "--t-coh", "1"], tmp_path, capsys)
    assert rc == 0 and len(_rows(out)) == 1


def test_attack_exit_codes(tmp_path, capsys):
    rc, out, _ = _run(["attack", "--scenario", "stale-read", "--tcm", "off"], tmp_path, capsys)
    assert rc == 0 and _rows(out)[0]["silent_corruption"] == "1"
    rc, out, _ = _run(["attack", "--scenario", "stale-read", "--tcm", "on"], tmp_path, capsys)
    assert rc == 2 and _rows(out)[0]["detected"] == "1"


def test_attack_campaign(tmp_path, capsys):
    rc, out, _ = _run(["attack", "--scenario", "campaign", "--actions", "40"], tmp_path, capsys)
    (row,) = _rows(out)
    assert row["silent_corruption"] == "0"
    assert rc == (2 if int(row["detected"]) else 0)


def test_attack_bad_tcm_value(tmp_path, capsys):
    rc, _, _ = _run(["attack", "--tcm", "maybe"], tmp_path, capsys)
    assert rc == 1


def test_smu_golden(tmp_path, capsys):
    rc, out, _ = _run(["smu-golden"], tmp_path, capsys)
    assert rc == 0
    rows = _rows(out)
    assert len(rows) == 9 and all(r["match"] == "1" for r in rows)
    rc, _, _ = _run(["smu-golden", "--scenario", "nope"], tmp_path, capsys)
    assert rc == 1


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "semsim.cli", "overhead", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "0.16015625" in proc.stdout


# -- report formatting ----------------------------------------------------------

@pytest.mark.parametrize("value,text", [
    (True, "1"), (False, "0"), (None, ""), (7, "7"), (0.0, "0"),
    (1.5, "1.5"), (2 / 3, "0.666667"), (123456.7, "123457"), (1e-7, "0.0000001"),
    (-0.25, "-0.25"),
])
def test_format_value(value, text):
    assert format_value(value) == text


def test_exact_floats_kept():
    assert format_value(0.16015625, exact=True) == "0.16015625"


def test_csv_sorted_columns_and_empty_rows():
    assert to_csv([{"b": 1, "a": 2}]) == "a,b\n2,1\n"
    with pytest.raises(ValueError):
        to_csv([])


def test_plot_optional(tmp_path):
    ok = plot_lines(tmp_path / "p.svg", [{"x": 1, "y": 2, "s": "a"}, {"x": 2, "y": 3, "s": "a"}],
                    "x", "y", "s")
    assert ok == (tmp_path / "p.svg").exists()
