import json
import os

import numpy as np
import pytest

from cfslab import cli
from cfslab.io import read_csv

SMALL_LATTICE = """
[lattice]
size = 4.0
modes = 3
eps = 0.5
n_t = 3
n_x = 3
t_extent = 1.5
band = 0.5
kernel_pairs = 5
krein_family = 3
krein_support = 4
charge_t0 = 1
charge_t1 = 1
"""


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(*argv):
    return cli.main([str(a) for a in argv])


# ---------------------------------------------------------------- config errors

def test_malformed_config_exits_2_with_line(tmp_path, capsys):
    cfg = write(tmp_path, "[sea]\nmasses = [1.0\nt_count = 3\n")
    assert run("sea", "--config", cfg, "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "run.toml:" in err and "malformed" in err
    line = int(err.split("run.toml:")[1].split(":")[0])
    assert line in (2, 3)


def test_unknown_key_reports_its_line(tmp_path, capsys):
    cfg = write(tmp_path, "[run]\nseed = 1\n\n[sea]\nmasses = [1.0]\nmas = 2\n")
    assert run("sea", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "run.toml:6: unknown key 'mas' in [sea]" in capsys.readouterr().err


def test_unknown_table_and_wrong_type(tmp_path, capsys):
    cfg = write(tmp_path, "[lattice]\nsize = 4.0\n")
    assert run("sea", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "run.toml:1: unknown table [lattice]" in capsys.readouterr().err
    cfg = write(tmp_path, "[sea]\nt_count = 2.5\n")
    assert run("sea", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "run.toml:2: t_count must be an integer" in capsys.readouterr().err


def test_semantic_errors_are_config_errors(tmp_path, capsys):
    cfg = write(tmp_path, "[run]\nworkers = 0\n")
    assert run("sea", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "run.toml:2:" in capsys.readouterr().err
    cfg = write(tmp_path, "[lattice]\nmodes = 4\n")
    assert run("lattice", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "odd" in capsys.readouterr().err
    cfg = write(tmp_path, "[classify]\nfixture = \"missing.json\"\n")
    assert run("classify", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "run.toml:2: file not found" in capsys.readouterr().err
    cfg = write(tmp_path, "[sea]\nsweep_points = [[1.0, 1.0, 0.0, 0.0]]\n")
    assert run("sea", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "light cone" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert run("sea", "--config", tmp_path / "nope.toml", "--out", tmp_path / "o") == 2


def test_key_lines():
    lines = cli.key_lines("a = 1\n[x]\n# c\nb = 2\n\n[y.z]\n\"q\" = 3\n")
    assert lines[("", "a")] == 1 and lines[("x", None)] == 2
    assert lines[("x", "b")] == 4 and lines[("y.z", "q")] == 7


# ---------------------------------------------------------------- runs and exit codes

def test_sea_twice_byte_identical(tmp_path):
    cfg = cli.fixture_path("sea.toml")
    assert run("sea", "--config", cfg, "--out", tmp_path / "a") == 0
    assert run("sea", "--config", cfg, "--out", tmp_path / "b") == 0
    for name in ("sea_grid.csv", "convergence.csv", "assertions.csv", "metrics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_assertion_failure_exits_1_and_is_listed(tmp_path, capsys):
    cfg = write(tmp_path, "[tolerances]\nel = -1.0\n[minimize]\ncount = 3\n")
    assert run("minimize", "--config", cfg, "--out", tmp_path / "o") == 1
    assert "minimize/el_spread" in capsys.readouterr().err
    man = cli.load_manifest(tmp_path / "o" / "manifest.json")
    assert not man.passed
    assert "minimize/el_spread" in man.failed and "minimize/volume" not in man.failed


def test_seed_flag_overrides_and_changes_random_inputs(tmp_path):
    cfg = cli.fixture_path("minimize.toml")
    run("minimize", "--config", cfg, "--out", tmp_path / "a", "--seed", 1)
    run("minimize", "--config", cfg, "--out", tmp_path / "b", "--seed", 2)
    run("minimize", "--config", cfg, "--out", tmp_path / "c", "--seed", 2)
    assert cli.load_manifest(tmp_path / "a" / "manifest.json").seed == 1
    a, b, c = (read_csv(tmp_path / d / "weights.csv")[1] for d in "abc")
    assert a != b and b == c


def test_default_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "root"))
    assert run("classify") == 0
    assert (tmp_path / "root" / "classify" / "pairs.csv").is_file()


def test_workers_flag_recorded_and_result_unchanged(tmp_path):
    cfg = cli.fixture_path("classify.toml")
    run("classify", "--config", cfg, "--out", tmp_path / "a", "--workers", 1)
    run("classify", "--config", cfg, "--out", tmp_path / "b", "--workers", 2)
    assert cli.load_manifest(tmp_path / "b" / "manifest.json").workers == 2
    assert (tmp_path / "a" / "pairs.csv").read_bytes() == (tmp_path / "b" / "pairs.csv").read_bytes()


def test_tolerance_profile_flag(tmp_path):
    run("sea", "--config", cli.fixture_path("sea.toml"), "--out", tmp_path / "o", "--tolerance-profile", "coarse")
    man = cli.load_manifest(tmp_path / "o" / "manifest.json")
    assert man.tolerance_profile == "coarse"
    assert man.tolerances["order"] == cli.TOLERANCE_PROFILES["coarse"]["order"]
    with pytest.raises(SystemExit):
        cli.main(["sea", "--tolerance-profile", "none"])


def test_streams_are_reproducible_and_distinct():
    a = cli.stream(7, 3).random(4)
    assert np.array_equal(a, cli.stream(7, 3).random(4))
    assert not np.array_equal(a, cli.stream(7, 4).random(4))
    assert not np.array_equal(a, cli.stream(8, 3).random(4))


# ---------------------------------------------------------------- export

def test_empty_result_gives_header_only_csv(tmp_path):
    one = json.loads(open(cli.fixture_path("operators.json")).read())[:1]
    (tmp_path / "one.json").write_text(json.dumps(one))
    cfg = write(tmp_path, "[classify]\nfixture = \"one.json\"\n")
    assert run("classify", "--config", cfg, "--out", tmp_path / "o") == 0
    assert (tmp_path / "o" / "pairs.csv").read_text() == ",".join(cli.PAIR_COLUMNS) + "\n"


def test_manifest_roundtrip_and_csv_export(tmp_path):
    assert run("cvp", "--config", cli.fixture_path("cvp.toml"), "--out", tmp_path) == 0
    man = cli.load_manifest(tmp_path / "manifest.json")
    assert man.subcommand == "cvp" and man.passed
    assert man.to_dict() == json.loads((tmp_path / "manifest.json").read_text())
    assert cli.RunManifest.from_dict(man.to_dict()) == man
    assert sorted(os.listdir(tmp_path)) == sorted(man.outputs)
    assert len(man.config_hash) == 64 and man.started <= man.finished
    path = cli.export(man, tmp_path, "csv")
    header, rows = read_csv(path)
    assert header == cli.ASSERTION_COLUMNS and len(rows) == len(man.assertions)
    with pytest.raises(ValueError):
        cli.export(man, tmp_path, "xml")


def test_floats_written_with_17_digits(tmp_path):
    run("cvp", "--config", cli.fixture_path("cvp.toml"), "--out", tmp_path)
    _, rows = read_csv(tmp_path / "weights.csv")
    w = [float(r[2]) for r in rows]
    res = json.loads((tmp_path / "result.json").read_text())
    assert w == res["weights"]


def test_config_hash_tracks_effective_config(tmp_path):
    cfg = cli.fixture_path("sea.toml")
    run("sea", "--config", cfg, "--out", tmp_path / "a")
    run("sea", "--config", cfg, "--out", tmp_path / "b", "--seed", 5)
    run("sea", "--config", cfg, "--out", tmp_path / "c")
    h = [cli.load_manifest(tmp_path / d / "manifest.json").config_hash for d in "abc"]
    assert h[0] == h[2] != h[1]


@pytest.mark.parametrize("sub", ["classify", "minimize", "sea", "lattice", "cvp"])
def test_csv_columns_match_schema(tmp_path, sub):
    cfg = write(tmp_path, SMALL_LATTICE) if sub == "lattice" else cli.fixture_path(sub + ".toml")
    rc = run(sub, "--config", cfg, "--out", tmp_path / "o")
    assert rc in (0, 1)
    man = cli.load_manifest(tmp_path / "o" / "manifest.json")
    expected = dict(cli.SCHEMAS[sub], **cli.COMMON_CSV)
    csvs = sorted(f for f in man.outputs if f.endswith(".csv"))
    assert csvs == sorted(expected)
    for name, cols in expected.items():
        header, rows = read_csv(tmp_path / "o" / name)
        assert header == cols
        assert all(len(r) == len(cols) for r in rows)
    # exit code 0 exactly when every assertion passed
    assert (rc == 0) == man.passed


def test_lattice_charge_box(tmp_path):
    text = SMALL_LATTICE.replace("charge_t0 = 1\ncharge_t1 = 1\n", "") + \
        "charge_box = { size = 4.0, modes = 3, eps = 0.5, n_t = 4, n_x = 3, t_extent = 2.0 }\n" \
        "charge_t0 = 1\ncharge_t1 = 2\ncharge_modes = [0, 53]\n"
    run("lattice", "--config", write(tmp_path, text), "--out", tmp_path / "o")
    _, rows = read_csv(tmp_path / "o" / "charge.csv")
    assert [r[0] for r in rows] == ["0", "53", "random"]
    bad = text.replace("n_t = 4, ", "n_t = 2, ")
    assert run("lattice", "--config", write(tmp_path, bad), "--out", tmp_path / "p") == 2
