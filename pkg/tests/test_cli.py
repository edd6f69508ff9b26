import csv
import io
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from treerate.cli import execute, main
from treerate.config import ConfigError, validate
from treerate.entropy import binary_entropy

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(config, base=CONFIGS):
    out, err = io.StringIO(), io.StringIO()
    code = execute(config, base, out, err)
    return code, out.getvalue(), err.getvalue()


def parse(text):
    lines = text.splitlines()
    assert lines[0].startswith("# treerate 0.1.0 experiment=")
    return list(csv.DictReader(lines[1:]))


def test_indisp_rows_match_closed_forms():
    cfg = {"experiment": "indisp", "params": {"theta": 0.25, "d1": 2, "d2": 4, "levels": 8, "explicit_max": 5}}
    code, out, _ = run(cfg)
    assert code == 0
    rows = parse(out)
    assert [r["mode"] for r in rows] == ["explicit"] * 5 + ["aggregated"] * 3
    for r in rows:
        n = int(r["n"])
        assert float(r["D"]) == pytest.approx(1 - binary_entropy(0.25), abs=1e-12)
        assert float(r["ell_P"]) == pytest.approx(n + 1, abs=1e-12)
        assert float(r["H_P"]) == pytest.approx(float(r["H_P_closed"]), abs=1e-10)
        assert float(r["gap"]) <= float(r["bound"]) + 1e-12


def test_compare_bound_bundled_holds(tmp_path):
    cfg = json.loads((CONFIGS / "compare_bound_sample.json").read_text())
    cfg["output"] = None
    cfg["params"]["report"] = str(tmp_path / "report.json")
    code, out, _ = run(cfg)
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["holds"] is True
    assert parse(out)


def test_malformed_config_gives_pointer():
    code, _, err = run({"experiment": "indisp", "params": {"theta": 0.25, "d1": 2, "d2": 4, "levels": 3, "bogus": 1}})
    assert code == 2 and "/params/bogus" in err
    with pytest.raises(ConfigError) as e:
        validate({"experiment": "kakutani", "params": {"levels": 10, "beta": 0.5, "alphas": [0.5]}})
    assert e.value.pointer.startswith("/params")
    code, _, err = run({"experiment": "nope"})
    assert code == 2


def test_guard_exit_code():
    cfg = {"experiment": "indisp", "params": {"theta": 0.25, "d1": 2, "d2": 40, "levels": 6, "explicit_max": 6}}
    code, _, err = run(cfg)
    assert code == 3 and "guard" in err


def test_rerun_is_byte_identical():
    cfg = {"experiment": "perturb-sim", "seed": 5,
           "params": {"beta": 2.0, "trials": 4, "levels": 50}}
    a = run(cfg)
    b = run(cfg)
    assert a[0] == 0 and a[1] == b[1]
    other = run({**cfg, "seed": 6})
    assert other[1] != a[1]


def test_header_comment_line():
    cfg = {"experiment": "kakutani", "seed": 3, "params": {"M": 4, "beta": 0.6, "levels": 20}}
    code, out, _ = run(cfg)
    head = out.splitlines()[0]
    assert code == 0
    assert "experiment=kakutani" in head and "seed=3" in head and "config_sha256=" in head
    rows = parse(out)
    assert float(rows[-1]["D"]) == pytest.approx(sum(
        ((1 + a) * math.log2(1 + a) + (1 - a) * math.log2(1 - a)) / 4
        for a in (k**-0.6 for k in range(2, 21))) + 2 / 4, rel=1e-12)


def test_entropy_rate_bundled_specs():
    cfg = {"experiment": "entropy-rate",
           "inputs": {"p": "bundled:markov2.json", "q": "bundled:markov2_uniform.json"},
           "params": {"levels": 30}}
    code, out, _ = run(cfg)
    assert code == 0
    rows = parse(out)
    assert len(rows) == 30
    assert all(float(r["gap"]) <= float(r["bound"]) + 1e-12 for r in rows)


def test_lansit_random_corpus():
    code, out, _ = run({"experiment": "lansit-check", "seed": 1, "params": {"trials": 20, "max_nodes": 200}})
    assert code == 0 and len(parse(out)) >= 20


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    text = capsys.readouterr().out
    for name in ("run", "lansit-check", "divergence", "compare-bound", "indisp",
                 "entropy-rate", "kakutani", "perturb-sim"):
        assert name in text


def test_module_entry_point(tmp_path):
    out = tmp_path / "k.csv"
    r = subprocess.run([sys.executable, "-m", "treerate", "kakutani", "--beta", "0.6", "--levels", "10",
                        "-o", str(out)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert out.read_text().startswith("# treerate 0.1.0")


def test_run_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "indisp", "output": "o.csv",
                               "params": {"theta": 0.3, "d1": 2, "d2": 3, "levels": 3}}))
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "o.csv").exists()
