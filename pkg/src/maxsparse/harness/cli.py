"""Command-line entry point: ``maxsparse <subcommand> --spec FILE [overrides]``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from ..datagen import save_corpus
from ..dictgen import save_matrix
from ..rip import delta_k_exhaustive
from .build import build_dictionary, training_corpus
from .engines import corpus_for
from .plots import render_report
from .runner import run_experiment
from .spec import ExperimentSpec, load_spec, parse_int_list
from .tables import Table, write_table

SUBCOMMANDS = ("gen-dict", "gen-corpus", "rip", "solve", "train", "eval", "stereo", "report")
# the experiment kind each subcommand runs when the spec does not fix one
DEFAULT_KIND = {"solve": "recovery_sweep", "train": "train", "stereo": "stereo_study"}


def _parser():
    p = argparse.ArgumentParser(prog="maxsparse", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--spec", type=Path, help="experiment file (INI sections)")
        sp.add_argument("--seed", type=int, help="override [experiment] seed")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--engine", help="comma-separated engine list")
        sp.add_argument("--threads", type=int, help="worker threads")
        if name == "report":
            sp.add_argument("results", nargs="?", type=Path, help="directory holding plot_*.tsv (default: --out)")
    return p


def _spec(args, kind=None) -> ExperimentSpec:
    if args.spec is None:
        raise SystemExit(f"{args.command}: --spec is required")
    spec = load_spec(args.spec)
    if kind and spec.kind != kind:
        spec = replace(spec, kind=kind)
    return spec.with_overrides(seed=args.seed, output=args.out, engines=args.engine, threads=args.threads)


def _emit(tables, stream):
    for t in tables:
        stream.write(t.to_text())


def main(argv=None, stream=None) -> int:
    stream = stream or sys.stdout
    args = _parser().parse_args(argv)
    cmd = args.command

    if cmd == "report":
        src = args.results or args.out
        if src is None:
            raise SystemExit("report: give a results directory or --out")
        made = render_report(src, args.out if args.results else None)
        _emit([Table(("figure",), [(str(p),) for p in made], {"source": str(src)})], stream)
        return 0

    if cmd == "gen-dict":
        spec = _spec(args)
        phi, _ = build_dictionary(spec)
        out = Path(spec.output)
        out.mkdir(parents=True, exist_ok=True)
        meta = {"family": spec.dictionary.get("family", "gaussian"), "hash": phi.hash, "seed": spec.dict_param("seed", 0)}
        save_matrix(out / "dictionary.txt", phi, meta)
        _emit([Table(("file", "n", "m", "hash"), [(str(out / "dictionary.txt"), phi.n, phi.m, phi.hash)], meta)], stream)
        return 0

    if cmd == "gen-corpus":
        spec = _spec(args)
        phi, _ = build_dictionary(spec)
        out = Path(spec.output)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        if "train_count" in spec.corpus:
            c = training_corpus(spec, phi)
            save_corpus(out / "corpus_train.txt", c)
            rows.append((str(out / "corpus_train.txt"), len(c), f"{c.d_range[0]}-{c.d_range[1]}"))
        for d in spec.d_values:
            c = corpus_for(phi, spec, d)
            save_corpus(out / f"corpus_test_d{d}.txt", c)
            rows.append((str(out / f"corpus_test_d{d}.txt"), len(c), str(d)))
        _emit([Table(("file", "count", "d"), rows, {"dictionary_hash": phi.hash, "seed": spec.seed})], stream)
        return 0

    if cmd == "rip":
        spec = _spec(args)
        phi, _ = build_dictionary(spec)
        rows = []
        for k in parse_int_list(spec.study.get("k", "1-3")):
            rep = delta_k_exhaustive(phi, k)
            rows.append((k, rep.delta, rep.side, " ".join(map(str, rep.witness_support))))
        t = Table(("k", "delta", "side", "witness"), rows, {"dictionary_hash": phi.hash},
                  "exhaustive restricted isometry constants")
        write_table(Path(spec.output) / "rip.tsv", t)
        _emit([t], stream)
        return 0

    spec = _spec(args, DEFAULT_KIND.get(cmd))
    res = run_experiment(spec)
    _emit([t for name, t in res.tables.items() if not name.endswith("trials") and name != "stereo_errors"], stream)
    if res.timing is not None:
        _emit([res.timing], stream)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
