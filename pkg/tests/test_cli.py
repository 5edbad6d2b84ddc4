import csv
import json
from pathlib import Path

import pytest

from recmeta.cli import build_parser, main, resolve_config
from recmeta.code_metrics import FEATURE_NAMES
from recmeta.experiment import ExperimentReport, ReportRow
from recmeta.user_features import FEATURES

ROOT = Path(__file__).resolve().parents[1]
TOY = ROOT / "fixtures" / "toy_interactions.csv"
TOY_ARGS = ["--input", str(TOY), "--rating-col", "rating"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def cache(tmp_path_factory):
    return tmp_path_factory.mktemp("cache")


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("ingest", "ground-truth", "features", "train", "run", "report", "code-metrics", "clear-cache"):
        assert name in out


@pytest.mark.parametrize("argv", [["run", "--bogus"], ["run", "--inp", "x"], ["frobnicate"]])
def test_bad_arguments_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_missing_input_names_stage(tmp_path, capsys):
    assert main(["ingest", "--input", str(tmp_path / "nope.csv")]) == 1
    assert "[ingest]" in capsys.readouterr().err


def test_corrupt_manifest_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[x]\nfamily = nosuchfamily\nsource = x.py\n")
    assert main(["ground-truth", *TOY_ARGS, "--manifest", str(bad), "--out", str(tmp_path)]) == 1
    assert "[portfolio]" in capsys.readouterr().err


def test_ingest_writes_stats(tmp_path):
    assert main(["ingest", *TOY_ARGS, "--out", str(tmp_path)]) == 0
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["filtered"]["n_users"] == 50
    assert stats["filtered"]["n_interactions"] == 1176
    assert len(read_csv(tmp_path / "interactions.csv")) == 1177


def test_features_headers_and_counts(tmp_path):
    assert main(["features", *TOY_ARGS, "--out", str(tmp_path)]) == 0
    users = read_csv(tmp_path / "user_features.csv")
    algos = read_csv(tmp_path / "algo_features.csv")
    assert users[0] == ["user_id", *FEATURES] and len(users) == 51
    assert algos[0] == ["algo_id", *FEATURE_NAMES] and len(algos) == 10


def test_ground_truth_shape_and_cache(tmp_path, cache):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["ground-truth", *TOY_ARGS, "--out", str(a), "--cache-dir", str(cache)]) == 0
    rows = read_csv(a / "performance.csv")
    assert rows[0] == ["user_id", "algo_id", "ndcg"] and len(rows) == 1 + 50 * 9
    stats = json.loads((a / "stats.json").read_text())
    assert stats["performance_shape"] == [50, 9]
    assert any((cache / "matrices").iterdir())
    # second run reads the cached matrix, third run computes from scratch
    assert main(["ground-truth", *TOY_ARGS, "--out", str(b), "--cache-dir", str(cache)]) == 0
    assert main(["ground-truth", *TOY_ARGS, "--out", str(c)]) == 0
    assert (a / "performance.csv").read_bytes() == (b / "performance.csv").read_bytes()
    assert (a / "performance.csv").read_bytes() == (c / "performance.csv").read_bytes()


def test_train_writes_models(tmp_path, cache):
    assert main(["train", *TOY_ARGS, "--out", str(tmp_path), "--cache-dir", str(cache)]) == 0
    for kind, n_reg in (("user_only", 9), ("user_algo", 1)):
        model = json.loads((tmp_path / f"model_{kind}.json").read_text())
        assert model["kind"] == kind and len(model["regressors"]) == n_reg


def test_config_file_and_flag_precedence(tmp_path, monkeypatch):
    ini = tmp_path / "c.ini"
    ini.write_text("[recmeta]\ninput = data.csv\nseed = 4\nk = 5\nsba_global = yes\n")
    args = build_parser().parse_args(["run", "--config", str(ini), "--seed", "9"])
    monkeypatch.delenv("RECMETA_CACHE_DIR", raising=False)
    cfg = resolve_config(args)
    assert (cfg.seed, cfg.k, cfg.sba_global) == (9, 5, True)
    assert cfg.input == tmp_path / "data.csv"
    assert cfg.cache_dir is None
    monkeypatch.setenv("RECMETA_CACHE_DIR", str(tmp_path / "env"))
    assert resolve_config(args).cache_dir == tmp_path / "env"


def test_config_unknown_key(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[recmeta]\nsede = 4\n")
    assert main(["run", "--config", str(ini)]) == 1
    err = capsys.readouterr().err
    assert "[config]" in err and "sede" in err


def test_code_metrics_stdout_and_manifest(tmp_path, capsys):
    src = tmp_path / "algo.py"
    src.write_text("def f(x):\n    return x + 1\n")
    assert main(["code-metrics", str(src)]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["algo_id", *FEATURE_NAMES] and rows[1][0] == "algo"
    out = tmp_path / "m.csv"
    assert main(["code-metrics", "--portfolio", str(ROOT / "src/recmeta/portfolio/default.ini"), "-o", str(out)]) == 0
    assert len(read_csv(out)) == 10
    assert main(["code-metrics", "--manifest", str(out)]) == 0
    broken = tmp_path / "broken.csv"
    lines = out.read_text().splitlines()
    broken.write_text(lines[0] + "\n" + lines[1].replace(",", ",-", 1) + "\n")
    assert main(["code-metrics", "--manifest", str(broken)]) == 1
    assert "[code-metrics]" in capsys.readouterr().err


def test_report_combines_and_rejects_duplicates(tmp_path, capsys):
    paths = []
    for name in ("a", "b"):
        row = ReportRow(name, "x", 0.1, 0.3, 0.12, 10.0, 40.0, 0.15, 12.0, 45.0)
        p = tmp_path / f"{name}.json"
        p.write_text(ExperimentReport.from_rows([row]).to_json())
        paths.append(str(p))
    assert main(["report", *paths, "--out", str(tmp_path / "all")]) == 0
    rows = read_csv(tmp_path / "all" / "report.csv")
    assert [r[0] for r in rows[1:]] == ["a", "b", "Average"]
    assert main(["report", paths[0], paths[0]]) == 1


def test_clear_cache(tmp_path):
    d = tmp_path / "cache"
    (d / "models").mkdir(parents=True)
    assert main(["clear-cache", "--cache-dir", str(d)]) == 0
    assert not d.exists()
