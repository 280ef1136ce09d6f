"""Seeded experiment execution, manifests and result tables."""
from __future__ import annotations

import hashlib
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__, netlab
from ..aiht import cluster_aiht_recover
from ..datagen import evaluate, per_sample
from ..dictgen import cluster_support, rank_perturbed
from ..model import content_hash
from ..rip import cor3_transform, delta_k_exhaustive, transformed_dictionary
from ..solvers import SolverConfig, iht, weighted_iht
from ..stereo import (
    OutlierLaw,
    estimate_normals,
    naive_least_squares,
    oracle_engine,
    random4_baseline,
    synthesize_scene,
)
from .build import build_dictionary, derive_seed, train_network
from .engines import corpus_for, make_engine
from .spec import ExperimentSpec, InvalidSpecError, parse_int_list
from .tables import Table, git_blob_hash, write_table

__all__ = ["TrialRecord", "ExperimentResult", "run_experiment", "write_results"]


@dataclass(frozen=True)
class TrialRecord:
    engine: str
    seed: int
    d: int
    index: int
    strict: bool
    loose: float
    wall_time: float = float("nan")
    aux: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.loose <= 1.0:
            raise ValueError(f"loose contribution {self.loose} outside [0, 1]")


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    tables: dict[str, Table]
    trials: list[TrialRecord] = field(default_factory=list)
    hashes: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    networks: dict = field(default_factory=dict)
    timing: Table | None = None
    files: dict = field(default_factory=dict)


def _map(spec, fn, items):
    """Ordered map over a worker pool; results come back in input order."""
    items = list(items)
    if spec.threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=spec.threads) as pool:
        return list(pool.map(fn, items))


def _combined(digests) -> str:
    return hashlib.sha256("".join(digests).encode()).hexdigest()


def _meta(spec, hashes):
    meta = {"experiment": spec.name, "kind": spec.kind, "seed": spec.seed, "package_version": __version__}
    meta.update(hashes)
    return meta


# accuracy sweeps -------------------------------------------------------------


def _sweep(spec, phi, engines, hashes, seeds, law=None, tag=""):
    n = phi.n
    corpora = {d: corpus_for(phi, spec, d, law) for d in spec.d_values}
    for d, c in corpora.items():
        seeds[f"test{tag}_d{d}"] = derive_seed(spec.seed, "test", d)
        hashes[f"corpus{tag}_d{d}"] = content_hash(c.X)

    def cell(job):
        eng, d = job
        c = corpora[d]
        start = time.perf_counter()
        scores = eng.score(c.Y, d)
        elapsed = time.perf_counter() - start
        strict, loose, _ = per_sample(scores, c, n)
        rep = evaluate(scores, c, n)
        return eng.name, d, rep, strict, loose, elapsed / len(c)

    jobs = [(e, d) for e in engines for d in spec.d_values]
    rows, trials = [], []
    for name, d, rep, strict, loose, per in _map(spec, cell, jobs):
        rows.append((name, d, len(strict), rep.s_acc, rep.l_acc))
        trials += [TrialRecord(name, seeds[f"test{tag}_d{d}"], d, i, bool(s), float(l), per)
                   for i, (s, l) in enumerate(zip(strict, loose))]
    return rows, trials, corpora


def _timing(spec, engines, corpora):
    samples = []
    for i in range(spec.timing_samples):
        d = spec.d_values[i % len(spec.d_values)]
        c = corpora[d]
        samples.append((c.Y[(i // len(spec.d_values)) % len(c)], d))
    rows = []
    for eng in engines:
        if eng.name == "random":
            continue
        times = []
        for y, d in samples:
            t0 = time.perf_counter()
            eng.single(y, d)
            times.append(time.perf_counter() - t0)
        rows.append((eng.name, len(times), statistics.fmean(times), statistics.median(times)))
    return Table(("engine", "samples", "mean_seconds", "median_seconds"), rows,
                 description="per-sample wall time, one observation per call; excludes setup and model load")


def _accuracy_table(spec, rows, hashes, first="engine"):
    return Table((first, "d", "count", "s_acc", "l_acc"), sorted(rows, key=lambda r: (r[0], r[1])),
                 _meta(spec, hashes), "support recovery accuracy per engine and sparsity level")


def _trial_table(trials, first="engine"):
    rows = [(t.engine, t.seed, t.d, t.index, t.strict, t.loose) for t in trials]
    return Table((first, "seed", "d", "index", "strict", "loose"), sorted(rows, key=lambda r: (r[0], r[2], r[3])))


def _run_sweep(spec, networks):
    phi, _ = build_dictionary(spec)
    hashes = {"dictionary_hash": phi.hash}
    seeds = {}
    engines = [make_engine(name, phi, spec, network=networks.get(name)) for name in spec.engines]
    for e in engines:
        hashes.update({f"{e.name}_{k}": v for k, v in e.hashes.items()})
    rows, trials, corpora = _sweep(spec, phi, engines, hashes, seeds)
    res = ExperimentResult(spec, {"accuracy": _accuracy_table(spec, rows, hashes), "trials": _trial_table(trials)},
                           trials, hashes, seeds)
    if spec.timing_samples:
        res.timing = _timing(spec, engines, corpora)
    for e in engines:
        if e.name == "ista":
            lam = e.info["lambda"]
            res.tables["ista_lambda"] = Table(("d", "lambda"), sorted(lam.items()), _meta(spec, hashes),
                                              "l1 weight per d, chosen on a separate tuning corpus")
    return res


def _run_ablation(spec, networks):
    phi, _ = build_dictionary(spec)
    hashes = {"dictionary_hash": phi.hash}
    seeds = {"train": derive_seed(spec.seed, "train"), "init": derive_seed(spec.seed, "init")}
    engines, trained = [], {}
    for variant in spec.engines:
        net = networks.get(variant)
        if net is None:
            net, _, _ = train_network(spec, phi, variant=variant)
        trained[variant] = net
        eng = make_engine("network", phi, spec, network=net)
        eng.name = variant
        hashes[f"{variant}_checkpoint"] = eng.hashes["checkpoint"]
        engines.append(eng)
    rows, trials, _ = _sweep(spec, phi, engines, hashes, seeds)
    res = ExperimentResult(spec, {"accuracy": _accuracy_table(spec, rows, hashes, "variant"),
                                  "trials": _trial_table(trials, "variant")}, trials, hashes, seeds, trained)
    return res


def _run_train(spec, networks):
    phi, _ = build_dictionary(spec)
    variant = spec.network.get("variant")
    net, trace, corpus = train_network(spec, phi, variant=variant)
    hashes = {"dictionary_hash": phi.hash, "train_corpus": content_hash(corpus.X), "checkpoint": netlab.checkpoint_hash(net)}
    rows = [(r["epoch"], r["lr"], r["loss"]) for r in trace]
    table = Table(("epoch", "lr", "loss"), rows, _meta(spec, hashes), "mean training loss per epoch")
    return ExperimentResult(spec, {"training": table}, [], hashes, {"train": derive_seed(spec.seed, "train")},
                            {"network": net})


# structured studies ------------------------------------------------------------


def _run_cor3(spec, networks):
    n = spec.dict_param("n", 10, int)
    m = spec.dict_param("m", 30, int)
    r = spec.dict_param("rank", 1, int)
    eps_list = tuple(float(v) for v in spec.study.get("epsilons", spec.dictionary.get("epsilon", "0.01")).split(","))
    law = spec.law()
    for name in spec.engines:
        if name not in ("iht", "weighted_iht"):
            raise InvalidSpecError(f"cor3_study supports engines iht and weighted_iht, not {name!r}")
    max_it = int(spec.solvers.get("max_iterations", 1000))

    def trial(job):
        ei, eps, i = job
        phi, delta = rank_perturbed(n, m, eps, r, derive_seed(spec.seed, "dictionary", ei, i))
        W, D = cor3_transform(phi, delta, eps, phi.meta["norm_scales"])
        pre = delta_k_exhaustive(phi, 2).delta
        post = delta_k_exhaustive(transformed_dictionary(phi, W, D), 2).delta
        A = phi.entries
        mu_plain = 1.0 / np.linalg.norm(A, 2) ** 2
        mu_w = 1.0 / np.linalg.norm(W @ A @ D, 2) ** 2
        rng = np.random.default_rng(derive_seed(spec.seed, "signal", ei, i))
        out = []
        for d in spec.d_values:
            supp = np.sort(rng.choice(m, d, replace=False))
            x = np.zeros(m)
            x[supp] = law.sample(rng, d)
            y = A @ x
            for name in spec.engines:
                if name == "iht":
                    est = iht(y, A, SolverConfig(k=d, max_iterations=max_it, step_size=mu_plain)).estimate
                else:
                    est = weighted_iht(y, A, W, D, SolverConfig(k=d, max_iterations=max_it, step_size=mu_w)).estimate
                out.append((name, d, est.support == tuple(supp)))
        return eps, i, pre, post, out, phi.hash

    jobs = [(ei, eps, i) for ei, eps in enumerate(eps_list) for i in range(spec.trials)]
    results = _map(spec, trial, jobs)
    hashes = {"dictionaries": _combined(h for *_, h in results)}
    rip_rows = [(eps, i, pre, post) for eps, i, pre, post, _, _ in results]
    agg = {}
    trials = []
    for eps, i, _, _, out, _ in results:
        for name, d, ok in out:
            agg.setdefault((eps, name, d), []).append(ok)
            trials.append(TrialRecord(name, i, d, i, ok, float(ok), aux={"epsilon": eps}))
    rec_rows = [(eps, name, d, len(v), float(np.mean(v))) for (eps, name, d), v in sorted(agg.items())]
    meta = _meta(spec, hashes)
    return ExperimentResult(spec, {
        "cor3_recovery": Table(("epsilon", "engine", "d", "trials", "success_rate"), rec_rows, meta,
                               "exact support recovery, plain vs transformed IHT"),
        "cor3_rip": Table(("epsilon", "seed", "delta2_pre", "delta2_post"), rip_rows, meta,
                          "delta_2 before and after the annihilating transform (columns renormalized)"),
    }, trials, hashes)


def _run_aiht(spec, networks):
    from ..dictgen import ClusteredDictSpec, clustered

    cs = ClusteredDictSpec.uniform(
        spec.dict_param("n", 24, int), spec.dict_param("clusters", 8, int),
        spec.dict_param("cluster_size", 6, int), spec.dict_param("epsilon", 0.01, float),
    )
    k_x = int(spec.study.get("k_x", 3))
    lo, hi = (float(v) for v in spec.study.get("amplitudes", "0.5, 1.0").split(","))
    sched = {k: int(spec.study[k]) for k in ("tau", "t_detail", "k_hold") if k in spec.study}
    for name in spec.engines:
        if name not in ("aiht", "iht"):
            raise InvalidSpecError(f"aiht_study supports engines aiht and iht, not {name!r}")

    def trial(i):
        cd = clustered(cs, derive_seed(spec.seed, "dictionary", i))
        rng = np.random.default_rng(derive_seed(spec.seed, "signal", i))
        supp = np.sort(rng.choice(cs.m, k_x, replace=False))
        x = np.zeros(cs.m)
        x[supp] = rng.uniform(lo, hi, k_x) * rng.choice([-1.0, 1.0], k_x)
        A = cd.dictionary.entries
        y = A @ x
        true_c = cluster_support(x, cs)
        out = []
        for name in spec.engines:
            if name == "aiht":
                res = cluster_aiht_recover(y, cd, k_x, len(true_c), **sched)
                z = res.info["phase_one_output"]
                phase1 = set(int(j) for j in np.flatnonzero(z)) == true_c
            else:
                mu = 1.0 / np.linalg.norm(A, 2) ** 2
                res = iht(y, A, SolverConfig(k=k_x, max_iterations=int(spec.solvers.get("max_iterations", 1000)), step_size=mu))
                phase1 = cluster_support(res.estimate.values, cs) == true_c
            out.append((name, res.estimate.support == tuple(supp), phase1))
        return i, out, cd.dictionary.hash

    results = _map(spec, trial, range(spec.trials))
    hashes = {"dictionaries": _combined(h for *_, h in results)}
    rows, trials = [], []
    for i, out, _ in results:
        for name, ok, p1 in out:
            rows.append((name, i, ok, p1))
            trials.append(TrialRecord(name, i, k_x, i, ok, float(ok), aux={"phase1": p1}))
    summary = []
    for name in spec.engines:
        mine = [r for r in rows if r[0] == name]
        summary.append((name, len(mine), float(np.mean([r[2] for r in mine])), float(np.mean([r[3] for r in mine]))))
    meta = _meta(spec, hashes)
    return ExperimentResult(spec, {
        "aiht": Table(("engine", "trials", "success_rate", "cluster_match_rate"), summary, meta,
                      "exact support recovery and cluster-level support match on clustered dictionaries"),
        "aiht_trials": Table(("engine", "seed", "success", "cluster_match"), sorted(rows), meta),
    }, trials, hashes)


def _run_stereo(spec, networks):
    phi, extras = build_dictionary(spec)
    if "rig" not in extras:
        raise InvalidSpecError("stereo_study needs dictionary family = nullspace")
    rig = extras["rig"]
    st = spec.study
    law = OutlierLaw(
        int(st.get("outliers_min", 3)), int(st.get("outliers_max", 3)),
        float(st.get("outlier_low", 0.2)), float(st.get("outlier_high", 1.0)),
    )
    points = int(st.get("points", 2000))
    scene = synthesize_scene(points, rig, law, derive_seed(spec.seed, "scene"))
    hashes = {"dictionary_hash": phi.hash, "scene": content_hash(scene.observations)}
    errors = {}
    for name in spec.engines:
        if name == "oracle":
            errors[name] = estimate_normals(scene, rig, oracle_engine(scene))[1]
        elif name == "naive":
            errors[name] = naive_least_squares(scene, rig)[1]
        elif name == "rnd4":
            errors[name] = random4_baseline(scene, rig, derive_seed(spec.seed, "rnd4"))
        else:
            eng = make_engine(name, phi, spec, network=networks.get(name))
            hashes.update({f"{name}_{k}": v for k, v in eng.hashes.items()})
            errors[name] = estimate_normals(scene, rig, lambda Y: eng.score(Y, law.max_count))[1]
    summary = [(k, len(v), float(np.mean(v)), float(np.median(v))) for k, v in errors.items()]
    per_point = [(k, i, float(e)) for k, v in errors.items() for i, e in enumerate(v)]
    meta = _meta(spec, hashes)
    meta["q"] = rig.q
    return ExperimentResult(spec, {
        "stereo": Table(("engine", "points", "mean_error_deg", "median_error_deg"), summary, meta,
                        "surface normal angular error on a synthetic scene"),
        "stereo_errors": Table(("engine", "point", "error_deg"), per_point, meta),
    }, [], hashes, {"scene": derive_seed(spec.seed, "scene")})


_RUNNERS = {
    "recovery_sweep": _run_sweep,
    "ablation": _run_ablation,
    "train": _run_train,
    "cor3_study": _run_cor3,
    "aiht_study": _run_aiht,
    "stereo_study": _run_stereo,
}


def run_experiment(spec: ExperimentSpec, *, networks: dict | None = None, write: bool = True) -> ExperimentResult:
    """Execute every cell of ``spec`` and, with ``write``, persist tables and a manifest.

    ``networks`` maps engine or variant names to in-memory networks so
    callers can skip checkpoint files.
    """
    res = _RUNNERS[spec.kind](spec, networks or {})
    if write:
        write_results(res)
    return res


def write_results(res: ExperimentResult) -> dict:
    """Tables, plot data, checkpoints and a replayable manifest under ``spec.output``."""
    from .plots import emit_plot_data

    out = Path(res.spec.output)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, table in res.tables.items():
        files[f"{name}.tsv"] = write_table(out / f"{name}.tsv", table)
    if res.timing is not None:
        files["timing.tsv"] = write_table(out / "timing.tsv", res.timing)
    if res.spec.kind == "train":
        net = res.networks["network"]
        netlab.save_checkpoint(net, out / "network.npz")
        files["network.npz"] = out / "network.npz"
    for path in emit_plot_data(res, out):
        files[path.name] = path
    lines = [res.spec.to_ini().rstrip(), "", "[manifest]"]
    lines += [f"hash.{k} = {v}" for k, v in sorted(res.hashes.items())]
    lines += [f"seed.{k} = {v}" for k, v in sorted(res.seeds.items())]
    lines += [f"file.{k} = {git_blob_hash(Path(p).read_bytes())}" for k, p in sorted(files.items())
              if k != "timing.tsv"]
    (out / "manifest.ini").write_text("\n".join(lines) + "\n", encoding="utf-8")
    res.files = files
    return files
