import io
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from maxsparse.datagen import load_corpus
from maxsparse.dictgen import load_matrix, read_matrix_meta
from maxsparse.harness import cli
from maxsparse.harness.build import build_dictionary, derive_seed, network_config, train_config
from maxsparse.harness.engines import MissingCheckpointError, make_engine
from maxsparse.harness.runner import TrialRecord, run_experiment
from maxsparse.harness.spec import InvalidSpecError, load_spec, parse_int_list, parse_spec
from maxsparse.harness.tables import Table, git_blob_hash, read_table, write_table

SWEEP = """
[experiment]
kind = recovery_sweep
name = tiny
seed = 4
trials = 30
d = 1-3
engines = iht, ista, omp, random
output = {out}
timing_samples = 6

[dictionary]
family = gaussian
n = 12
m = 30
seed = 2

[solvers]
ista_lambda = 1e-3, 1e-2
ista_max_iterations = 2000
tune_count = 20
"""

TRAIN = """
[experiment]
kind = train
name = tiny_train
seed = 1
trials = 20
d = 1-2
engines = network
output = {out}

[dictionary]
family = gaussian
n = 8
m = 16

[corpus]
train_count = 400
train_d = 1-3

[network]
depth = 4

[training]
epochs = 2
batch_size = 50
initial_lr = 0.01
"""


def _spec(text, out):
    return parse_spec(text.format(out=out))


def test_parse_int_list():
    assert parse_int_list("1-4") == (1, 2, 3, 4)
    assert parse_int_list("3, 5,7") == (3, 5, 7)
    assert parse_int_list("1-3, 8, 2") == (1, 2, 3, 8)
    assert parse_int_list([2, 1]) == (2, 1)


def test_spec_round_trip_and_overrides(tmp_path):
    spec = _spec(SWEEP, tmp_path)
    assert spec.d_values == (1, 2, 3) and spec.engines == ("iht", "ista", "omp", "random")
    assert spec.ista_lambdas() == (1e-3, 1e-2)
    again = parse_spec(spec.to_ini())
    assert again.to_ini() == spec.to_ini()
    o = spec.with_overrides(seed=9, engines="omp", threads=3, output="x")
    assert (o.seed, o.engines, o.threads, o.output) == (9, ("omp",), 3, "x")


@pytest.mark.parametrize("text", [
    "[dictionary]\nn = 3\n",
    "[experiment]\nkind = nonsense\nengines = iht\n",
    "[experiment]\nkind = recovery_sweep\n",
    "[experiment]\nkind = recovery_sweep\nengines = iht\ntrials = 0\n",
    "[experiment]\nkind = recovery_sweep\nengines = iht\nseed = abc\n",
    "not an ini file",
])
def test_invalid_specs(text):
    with pytest.raises(InvalidSpecError):
        parse_spec(text)


def test_unknown_family_and_variant(tmp_path):
    spec = _spec(SWEEP, tmp_path)
    with pytest.raises(InvalidSpecError):
        build_dictionary(parse_spec(spec.to_ini().replace("family = gaussian", "family = fractal")))
    with pytest.raises(InvalidSpecError):
        network_config(spec, 4, 8, "transformer")


def test_derive_seed_streams():
    assert derive_seed(0, "test", 3) == derive_seed(0, "test", 3)
    seen = {derive_seed(0, t, 1) for t in ("test", "tune", "train", "init")}
    assert len(seen) == 4
    assert derive_seed(0, "test", 1) != derive_seed(1, "test", 1)


def test_git_blob_hash_matches_git(tmp_path):
    data = b"# columns: a\tb\n1\t2\n"
    p = tmp_path / "f.tsv"
    p.write_bytes(data)
    if shutil.which("git") is None:
        pytest.skip("git not installed")
    out = subprocess.run(["git", "hash-object", str(p)], capture_output=True, text=True, check=True).stdout.strip()
    assert git_blob_hash(data) == out


def test_table_round_trip(tmp_path):
    t = Table(("engine", "d", "s_acc"), [("iht", 1, 0.25), ("omp", 2, 1 / 3)], {"seed": 7, "hash": "ab12"}, "demo table")
    write_table(tmp_path / "t.tsv", t)
    text = (tmp_path / "t.tsv").read_text(encoding="utf-8")
    assert text.startswith("# demo table\n# seed=7")
    back = read_table(tmp_path / "t.tsv")
    assert back.columns == t.columns and back.rows == t.rows
    assert back.meta == {"seed": 7, "hash": "ab12"}
    (tmp_path / "bad.tsv").write_text("1\t2\n")
    with pytest.raises(ValueError):
        read_table(tmp_path / "bad.tsv")


def test_trial_record_validation():
    with pytest.raises(ValueError):
        TrialRecord("iht", 0, 1, 0, True, 1.5)


def test_sweep_outputs_and_replay(tmp_path):
    spec = _spec(SWEEP, tmp_path / "a")
    res = run_experiment(spec)
    acc = read_table(tmp_path / "a" / "accuracy.tsv")
    assert len(acc.rows) == 4 * 3
    assert acc.meta["dictionary_hash"] == build_dictionary(spec)[0].hash
    assert all(s <= l for s, l in zip(acc.column("s_acc"), acc.column("l_acc")))
    assert len(read_table(tmp_path / "a" / "trials.tsv").rows) == 4 * 3 * 30
    assert read_table(tmp_path / "a" / "timing.tsv").column("engine") == ["iht", "ista", "omp"]
    assert set(read_table(tmp_path / "a" / "ista_lambda.tsv").column("d")) == {1, 2, 3}
    assert dict(zip(acc.column("engine"), acc.column("s_acc")))["omp"] > 0
    assert len(res.trials) == 4 * 3 * 30

    # replaying the manifest reproduces every table byte for byte
    manifest = (tmp_path / "a" / "manifest.ini").read_text()
    assert "[manifest]" in manifest and "file.accuracy.tsv" in manifest
    replay = load_spec(tmp_path / "a" / "manifest.ini").with_overrides(output=tmp_path / "b")
    run_experiment(replay)
    for name in ("accuracy.tsv", "trials.tsv", "ista_lambda.tsv", "plot_accuracy_vs_d.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_threads_do_not_change_results(tmp_path):
    spec = _spec(SWEEP, tmp_path / "one").with_overrides(engines="iht,omp")
    run_experiment(spec)
    run_experiment(spec.with_overrides(threads=3, output=tmp_path / "three"))
    for name in ("accuracy.tsv", "trials.tsv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "three" / name).read_bytes()


def test_missing_checkpoint(tmp_path):
    spec = _spec(SWEEP, tmp_path)
    phi, _ = build_dictionary(spec)
    with pytest.raises(MissingCheckpointError):
        make_engine("network", phi, spec)
    with pytest.raises(MissingCheckpointError):
        make_engine(f"network:{tmp_path / 'none.npz'}", phi, spec)
    with pytest.raises(ValueError):
        make_engine("lasso", phi, spec)


def test_train_config_mapping(tmp_path):
    spec = _spec(TRAIN, tmp_path)
    tc = train_config(spec)
    assert (tc.total_epochs, tc.batch_size, tc.initial_lr) == (2, 50, 0.01)
    assert network_config(spec, 8, 16).whiten_input


def _cli(*argv):
    buf = io.StringIO()
    assert cli.main([str(a) for a in argv], stream=buf) == 0
    return buf.getvalue()


def test_cli_pipeline(tmp_path):
    sweep = tmp_path / "sweep.ini"
    sweep.write_text(SWEEP.format(out=tmp_path / "unused"))
    out = _cli("gen-dict", "--spec", sweep, "--out", tmp_path / "g")
    assert "# columns: file\tn\tm\thash" in out
    M = load_matrix(tmp_path / "g" / "dictionary.txt")
    phi, _ = build_dictionary(load_spec(sweep))
    assert np.array_equal(M, phi.entries)
    assert read_matrix_meta(tmp_path / "g" / "dictionary.txt")["hash"] == phi.hash

    _cli("gen-corpus", "--spec", sweep, "--out", tmp_path / "g")
    c = load_corpus(tmp_path / "g" / "corpus_test_d2.txt", phi)
    assert len(c) == 30 and set(c.d) == {2}

    out = _cli("rip", "--spec", sweep, "--out", tmp_path / "g")
    rip = read_table(tmp_path / "g" / "rip.tsv")
    assert rip.column("k") == [1, 2, 3]
    assert rip.column("delta")[0] < 1e-12

    out = _cli("solve", "--spec", sweep, "--out", tmp_path / "s", "--engine", "omp,random", "--seed", "11")
    assert "# seed=11" in out and "omp" in out
    assert read_table(tmp_path / "s" / "accuracy.tsv").meta["seed"] == 11

    out = _cli("report", tmp_path / "s", "--out", tmp_path / "figs")
    assert (tmp_path / "figs" / "plot_accuracy_vs_d.png").exists()
    assert (tmp_path / "figs" / "plot_accuracy_vs_d.png").read_bytes()[:4] == b"\x89PNG"


def test_cli_train_then_eval(tmp_path):
    spec = tmp_path / "train.ini"
    spec.write_text(TRAIN.format(out=tmp_path / "t"))
    _cli("train", "--spec", spec)
    ckpt = tmp_path / "t" / "network.npz"
    assert ckpt.exists()
    assert len(read_table(tmp_path / "t" / "training.tsv").rows) == 2
    ev = tmp_path / "eval.ini"
    ev.write_text(TRAIN.format(out=tmp_path / "e").replace("kind = train", "kind = recovery_sweep"))
    out = _cli("eval", "--spec", ev, "--engine", f"network:{ckpt},random")
    assert f"network:{ckpt}" in out
    acc = read_table(tmp_path / "e" / "accuracy.tsv")
    assert len(acc.rows) == 4
    with pytest.raises(MissingCheckpointError):
        _cli("eval", "--spec", ev, "--engine", "network")


def test_cli_stereo_and_studies(tmp_path):
    st = tmp_path / "stereo.ini"
    st.write_text(f"""
[experiment]
kind = stereo_study
seed = 0
engines = oracle, naive, rnd4, omp
output = {tmp_path / 'st'}
[dictionary]
family = nullspace
q = 10
[study]
points = 200
""")
    _cli("stereo", "--spec", st)
    t = read_table(tmp_path / "st" / "stereo.tsv")
    err = dict(zip(t.column("engine"), t.column("mean_error_deg")))
    assert err["oracle"] < 0.01 < 5 < err["naive"]
    assert len(read_table(tmp_path / "st" / "stereo_errors.tsv").rows) == 4 * 200

    cor3 = load_spec(Path(__file__).parents[1] / "configs" / "cor3.ini").with_overrides(output=tmp_path / "c")
    res = run_experiment(parse_spec(cor3.to_ini().replace("trials = 100", "trials = 5")))
    assert len(res.tables["cor3_rip"].rows) == 5
    aiht = load_spec(Path(__file__).parents[1] / "configs" / "aiht.ini").with_overrides(output=tmp_path / "h")
    res = run_experiment(parse_spec(aiht.to_ini().replace("trials = 200", "trials = 3")))
    assert res.tables["aiht"].column("engine") == ["aiht", "iht"]
    _cli("report", tmp_path / "h")
    assert any(p.suffix == ".png" for p in (tmp_path / "h").iterdir())
