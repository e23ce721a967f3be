import json
import statistics

import pytest

from subdyve.cli import SCHEMA, ConfigError, RunConfig, main

PIPELINE = ("synth", "mine", "fingerprint", "network", "propagate", "refine", "eval")


def run_pipeline(out, seed=0, extra=()):
    for stage in PIPELINE:
        assert main(["--seed", str(seed), "--out", str(out), *extra, stage]) == 0, stage


def active_median_rank(out):
    truth = dict(line.split("\t") for line in (out / "truth.tsv").read_text().split("\n") if line)
    rows = [line.split("\t") for line in (out / "ranking.tsv").read_text().split("\n") if line]
    ranks = [int(r[2]) for r in rows if truth[r[0]] == "1"]
    return statistics.median(ranks), len(rows)


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    outs = {}
    for seed in range(5):
        outs[seed] = root / f"s{seed}"
        run_pipeline(outs[seed], seed)
    return outs


def test_config_defaults_follow_published_settings():
    cfg = RunConfig()
    assert cfg["gnn"]["lambda_rank"] == 0.3 and cfg["gnn"]["lambda_contrast"] == 0.6
    assert cfg["gnn"]["lr"] == 8e-4 and cfg["gnn"]["weight_decay"] == 1.57e-5
    assert cfg["refine"]["max_iter"] == 6 and cfg["refine"]["patience"] == 3
    assert cfg["refine"]["n_splits"] == 2 and cfg["refine"]["tau_fdr"] == 0.1
    assert cfg["refine"]["beta"] == 0.7 and cfg["mining"]["d"] == 100
    rc = cfg.refine_config()
    assert rc.epochs == 50 and rc.loss.gamma_np == 5.0 and rc.loss.margin == 0.5


def test_config_round_trip():
    cfg = RunConfig({"refine": {"beta": 0.123456789012345678, "baseline": "0.25"}, "metrics": {"ef_pct": "0.5, 2"}})
    back = RunConfig.from_ini(cfg.to_ini())
    assert back.values == cfg.values
    assert back["refine"]["baseline"] == 0.25 and back["metrics"]["ef_pct"] == [0.5, 2.0]
    assert RunConfig.from_ini(RunConfig().to_ini()).values == RunConfig().values
    assert set(SCHEMA) == set(back.values)


@pytest.mark.parametrize(
    "text",
    ["[refine]\nbogus = 1\n", "[nosuch]\nx = 1\n", "[refine]\nmax_iter = many\n", "[refine]\ntau_fdr = 2\n", "no header"],
)
def test_config_rejects_bad_entries(text):
    with pytest.raises(ConfigError):
        RunConfig.from_ini(text)


def test_bad_config_file_exits_2(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[gnn]\nlearning_rate = 0.1\n")
    assert main(["--config", str(ini), "--out", str(tmp_path), "synth"]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_config_file_is_applied(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[synth]\nn_active = 6\nn_inactive = 10\nn_negatives = 4\nn_seeds = 3\n")
    assert main(["--config", str(ini), "--out", str(tmp_path), "synth"]) == 0
    assert len((tmp_path / "compounds.tsv").read_text().splitlines()) == 16
    assert len((tmp_path / "seeds.txt").read_text().splitlines()) == 3


def test_pipeline_ranks_planted_actives_early(pipelines):
    # the planted actives' median rank sits in the top 10% for most seeds
    hits = 0
    for out in pipelines.values():
        med, n = active_median_rank(out)
        hits += med <= 0.1 * n
    assert hits >= 4


def test_pipeline_outputs_and_report(pipelines):
    out = pipelines[0]
    for name in ("discs.tsv", "fingerprints.tsv", "edges.tsv", "nodes.tsv", "propagation.tsv", "ranking.tsv", "trace.tsv", "weights.tsv"):
        assert (out / name).is_file()
    report = json.loads((out / "report.json").read_text())
    assert set(report["metrics"]) == {"bedroc_20", "bedroc_85", "ef_1pct", "ef_5pct", "auroc"}
    assert 0 <= report["metrics"]["bedroc_20"] <= 1
    seeds = set((out / "seeds.txt").read_text().split())
    ranked = {line.split("\t")[0] for line in (out / "ranking.tsv").read_text().splitlines()}
    assert not seeds & ranked
    manifest = json.loads((out / "refine.manifest.json").read_text())
    assert set(manifest["inputs"]) == {"edges.tsv", "nodes.tsv", "fingerprints.tsv", "seeds.txt"}
    assert set(manifest) == {"stage", "inputs", "outputs", "config", "versions"}


def test_rerun_is_byte_identical(pipelines, tmp_path):
    run_pipeline(tmp_path, 0)
    names = sorted(p.name for p in pipelines[0].iterdir())
    assert names == sorted(p.name for p in tmp_path.iterdir())
    for name in names:
        assert (tmp_path / name).read_bytes() == (pipelines[0] / name).read_bytes(), name


def test_cache_skip_and_force(pipelines, capsys):
    out = str(pipelines[0])
    assert main(["--out", out, "network"]) == 0
    assert "up to date" in capsys.readouterr().out
    assert main(["--out", out, "--force", "network"]) == 0
    assert "wrote" in capsys.readouterr().out
    # a changed config slice invalidates the cache
    assert main(["--out", out, "--seed", "7", "network"]) == 0
    assert "wrote" in capsys.readouterr().out
    assert main(["--out", out, "--force", "network"]) == 0


def test_modified_upstream_artifact_exits_3(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "synth"]) == 0
    assert main(["--out", str(tmp_path), "mine"]) == 0
    with open(tmp_path / "discs.tsv", "a") as fh:
        fh.write("\n")
    assert main(["--out", str(tmp_path), "fingerprint"]) == 3
    assert "rerun" in capsys.readouterr().err


def test_missing_input_exits_3(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "network"]) == 3
    assert "does not exist" in capsys.readouterr().err


def test_eval_without_actives_exits_3(pipelines, tmp_path, capsys):
    out = pipelines[0]
    truth = tmp_path / "allzero.tsv"
    truth.write_text("".join(line.split("\t")[0] + "\t0\n" for line in (out / "truth.tsv").read_text().splitlines()))
    code = main(["--out", str(tmp_path), "eval", "--ranking", str(out / "ranking.tsv"), "--truth", str(truth)])
    assert code == 3
    assert "degenerate" in capsys.readouterr().err


def test_eval_bootstrap(pipelines, tmp_path):
    out = pipelines[1]
    args = ["--out", str(tmp_path), "eval", "--ranking", str(out / "ranking.tsv"), "--truth", str(out / "truth.tsv")]
    assert main([*args, "--bootstrap", "20"]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report["bootstrap"]) == set(report["metrics"])
    assert all(v["sd"] >= 0 for v in report["bootstrap"].values())


def test_nonconvergence_exits_4(pipelines, tmp_path):
    out = pipelines[0]
    ini = tmp_path / "c.ini"
    ini.write_text("[propagation]\nmax_iter = 1\n")
    args = ["--config", str(ini), "--out", str(tmp_path), "propagate"]
    roles = ["--edges", str(out / "edges.tsv"), "--nodes", str(out / "nodes.tsv"), "--seeds", str(out / "seeds.txt")]
    assert main([*args, *roles]) == 4


def test_config_command_prints_schema(capsys):
    assert main(["config"]) == 0
    text = capsys.readouterr().out
    assert RunConfig.from_ini(text).values == RunConfig().values
