import csv
import json

import numpy as np
import pytest
from conftest import write_jsonl
from hypothesis import given
from hypothesis import strategies as st

from rtrojan.cli import main, run_experiment
from rtrojan.config import ConfigError, ExperimentConfig, dump_flat, parse_flat, seed_stream
from rtrojan.data import load_dataset_dir
from rtrojan.synthetic import generate_synthetic_dataset

MINI = """\
# tiny end-to-end run
dataset.kind = synthetic
dataset.users = 40
dataset.items = 30
dataset.clusters = 3
dataset.density = 0.12
attack.name = rtrojan, random
attack.outer_iterations = 1
attack.initial_epochs = 2
attack.pretrain_epochs = 5
attack.dim = 4
attack.n_filters = 4
attack.word_dim = 8
attack.doc_len = 30
victims = wrmf
victim.wrmf.iterations = 3
seeds = 0
"""


def _write_cfg(tmp_path, text=MINI, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text + f"output = {tmp_path / 'out'}\n")
    return path


# ---------------------------------------------------------------- config format

def test_parse_values_and_lists():
    flat = parse_flat("a.b = 3\na.c = 0.5  # comment\nseeds = 1, 2,3\na.d = true\na.e = none\na.f = 'x y'\n")
    assert flat == {"a.b": 3, "a.c": 0.5, "seeds": [1, 2, 3], "a.d": True, "a.e": None, "a.f": "x y"}
    with pytest.raises(ConfigError):
        parse_flat("no equals sign here")


def test_canonical_roundtrip_and_hash():
    cfg = ExperimentConfig.from_text(MINI)
    again = ExperimentConfig.from_text(cfg.canonical())
    assert again.canonical() == cfg.canonical()
    assert again.hash() == cfg.hash()
    shuffled = "\n".join(reversed(MINI.strip().splitlines()[1:]))
    assert ExperimentConfig.from_text(shuffled).hash() == cfg.hash()
    changed = ExperimentConfig.from_text(MINI + "attack.lam = 0.7\n")
    assert changed.hash() != cfg.hash()


@given(st.dictionaries(st.from_regex(r"[a-z]{1,5}\.[a-z]{1,5}", fullmatch=True),
                       st.one_of(st.integers(-1000, 1000), st.booleans(), st.from_regex(r"[a-z]{1,8}", fullmatch=True)),
                       max_size=6))
def test_dump_parse_roundtrip(mapping):
    mapping = {k: v for k, v in mapping.items() if k not in ("attack.name", "dataset.scale")}
    assert parse_flat(dump_flat(mapping)) == {k: (None if v == "none" else v) if not isinstance(v, str) or v not in ("true", "false")
                                               else v == "true" for k, v in mapping.items()}


def test_unknown_key_and_bad_values_name_fields():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_text("bogus = 1\n")
    assert "bogus" in err.value.errors
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_text("victims = svd\nattack.lam = 2\nattack.nope = 1\n").validate()
    assert {"victims", "attack.lam", "attack.nope"} <= set(err.value.errors)


def test_seed_streams_are_distinct_and_stable():
    names = ("data", "split", "target", "attack", "victim", "backend")
    vals = [seed_stream(3, n) for n in names]
    assert len(set(vals)) == len(vals)
    assert seed_stream(3, "data") == seed_stream(3, "data") != seed_stream(4, "data")


# ---------------------------------------------------------------- run command

def test_invalid_victim_exits_2_naming_field(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, MINI.replace("victims = wrmf", "victims = nosuch"))
    assert main(["run", "--config", str(cfg)]) == 2
    assert "victims" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = _write_cfg(tmp)
    code = main(["run", "--config", str(cfg)])
    return tmp, cfg, code


def test_minimal_run_outputs(mini_run):
    tmp, _, code = mini_run
    out = tmp / "out"
    assert code == 0
    assert {"config.txt", "aggregate.csv", "manifest.json", "seed_0"} <= {p.name for p in out.iterdir()}
    rows = list(csv.DictReader(open(out / "aggregate.csv")))
    assert sorted((r["attack"], r["victim"]) for r in rows) == [("random", "wrmf"), ("rtrojan", "wrmf")]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == ExperimentConfig.from_file(out / "config.txt").hash()
    assert manifest["reports"] == ["seed_0/report_random_wrmf.json", "seed_0/report_rtrojan_wrmf.json"]
    assert manifest["failed_stages"] == []
    run_dir = out / "seed_0" / "rtrojan"
    assert {"loss_trace.csv", "fake_profiles.jsonl", "generator.rtck", "attack_config.txt", "representations.csv"} <= {
        p.name for p in run_dir.iterdir()
    }


def test_rerun_is_byte_identical(mini_run):
    tmp, cfg, _ = mini_run
    assert run_experiment(cfg, out=tmp / "again") == 0
    for rel in ("aggregate.csv", "seed_0/rtrojan/fake_profiles.jsonl", "seed_0/random/fake_profiles.jsonl"):
        assert (tmp / "out" / rel).read_bytes() == (tmp / "again" / rel).read_bytes()


def test_eval_only_reproduces_run_report(mini_run, capsys):
    tmp, _, _ = mini_run
    fakes = tmp / "out" / "seed_0" / "rtrojan" / "fake_profiles.jsonl"
    capsys.readouterr()
    assert main(["eval-only", "--fakes", str(fakes), "--victim", "wrmf"]) == 0
    rep = json.loads(capsys.readouterr().out)
    ref = json.loads((tmp / "out" / "seed_0" / "report_rtrojan_wrmf.json").read_text())
    for key in ("target_item", "n_target_users", "A", "K", "hr_before", "hr_after", "ndcg_before", "ndcg_after", "seeds"):
        assert rep[key] == ref[key]
    assert main(["eval-only", "--fakes", str(fakes), "--victim", "svd"]) == 2


def test_stage_failure_exits_1_with_stage(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, MINI.replace("dataset.kind = synthetic", f"dataset.kind = amazon\ndataset.path = {tmp_path / 'nothing.json'}"))
    assert main(["run", "--config", str(cfg)]) == 1
    assert "stage 'ingest'" in capsys.readouterr().err


# ---------------------------------------------------------------- synth / ingest / eval-only

def test_synth_then_eval_only(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--users", "30", "--items", "20", "--seed", "1", "--density", "0.2", "--out", str(data)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert (stats["users"], stats["items"]) == (30, 20)
    ds = load_dataset_dir(data)
    assert ds.n_users == 30 and ds.n_items == 20
    fakes = write_jsonl(tmp_path / "f.jsonl", [
        {"fake_user_id": f"fake_{k}", "ratings": [["i3", 5], [f"i{5 + k}", 4]], "reviews": [["i3", "great"], [f"i{5 + k}", "good"]]}
        for k in range(3)
    ])
    assert main(["eval-only", "--fakes", str(fakes), "--victim", "wrmf", "--data", str(data), "--K", "5", "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["target_item"] == 3 and rep["A"] == 3 and rep["K"] == 5
    assert main(["eval-only", "--fakes", str(tmp_path / "missing.jsonl"), "--victim", "wrmf", "--data", str(data)]) == 1


def test_ingest_amazon(tmp_path, capsys):
    reviews = write_jsonl(tmp_path / "reviews.json", [
        {"reviewerID": u, "asin": i, "overall": r, "reviewText": f"{u} on {i}", "unixReviewTime": 10 * k}
        for k, (u, i, r) in enumerate([("A", "x", 5), ("A", "y", 3), ("B", "x", 4), ("C", "z", 1)])
    ])
    meta = write_jsonl(tmp_path / "meta.json", [{"asin": "x", "title": "X", "categories": [["Music", "Guitar"]]}])
    assert main(["ingest", "--format", "amazon", "--in", str(reviews), "--meta", str(meta), "--out", str(tmp_path / "ds")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert (stats["users"], stats["items"], stats["interactions"]) == (3, 3, 4)
    assert stats["sparsity"] == round(1 - 4 / 9, 4)
    assert main(["ingest", "--in", str(tmp_path / "absent.json"), "--out", str(tmp_path / "x")]) == 1


# ---------------------------------------------------------------- planted-cluster generator

def test_synthetic_full_density_rates_everything():
    ds = generate_synthetic_dataset(12, 9, 3, 1.0, seed=0)
    assert ds.ratings.nnz == 12 * 9


def test_synthetic_in_cluster_ratings_higher():
    ds = generate_synthetic_dataset(80, 40, 4, 0.2, seed=1)
    X = ds.ratings.tocoo()
    label = np.array([next(iter(a.categories)) for a in ds.attributes])
    # a user's cluster is the label of most of their items
    user_cluster = {u: max(set(label[ds.ratings[u].indices]), key=list(label[ds.ratings[u].indices]).count) for u in range(80)}
    same = np.array([label[i] == user_cluster[u] for u, i in zip(X.row, X.col)])
    assert X.data[same].mean() > X.data[~same].mean()


def test_synthetic_seeded():
    a = generate_synthetic_dataset(30, 20, 2, 0.1, seed=5)
    b = generate_synthetic_dataset(30, 20, 2, 0.1, seed=5)
    c = generate_synthetic_dataset(30, 20, 2, 0.1, seed=6)
    assert (a.ratings != b.ratings).nnz == 0 and a.reviews == b.reviews
    assert (a.ratings != c.ratings).nnz > 0
    with pytest.raises(ValueError):
        generate_synthetic_dataset(10, 10, 2, 0.0)
