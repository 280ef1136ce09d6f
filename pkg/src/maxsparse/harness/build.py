"""Turn spec sections into dictionaries, corpora and networks."""
from __future__ import annotations

import numpy as np

from .. import netlab
from ..datagen import AmplitudeLaw, Corpus, make_corpus
from ..dictgen import (
    ClusteredDictSpec,
    clustered,
    decaying_spectrum,
    gaussian_unit_columns,
    load_matrix,
    rank_perturbed,
)
from ..model import Dictionary
from ..stereo import nullspace_dictionary, random_rig
from .spec import ExperimentSpec, InvalidSpecError, parse_int_list

__all__ = [
    "TAGS",
    "derive_seed",
    "build_dictionary",
    "network_config",
    "train_config",
    "training_corpus",
    "train_network",
    "VARIANTS",
]

# stream tags keep test, tuning and training draws independent
TAGS = {"dictionary": 0, "test": 1, "tune": 2, "train": 3, "init": 4, "scene": 5, "signal": 6, "rnd4": 7, "random": 8}


def derive_seed(base: int, tag: str, *more: int) -> int:
    ss = np.random.SeedSequence([int(base), TAGS[tag], *(int(v) for v in more)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def build_dictionary(spec: ExperimentSpec):
    """Return ``(Dictionary, extras)``; extras carry family-specific objects."""
    fam = spec.dictionary.get("family", "gaussian")
    seed = spec.dict_param("seed", 0, int)
    n = spec.dict_param("n", 20, int)
    m = spec.dict_param("m", 100, int)
    if fam == "gaussian":
        return gaussian_unit_columns(n, m, seed), {}
    if fam == "decaying_spectrum":
        return decaying_spectrum(n, m, seed), {}
    if fam == "rank_perturbed":
        phi, delta = rank_perturbed(n, m, spec.dict_param("epsilon", 0.01, float), spec.dict_param("rank", 1, int), seed)
        return phi, {"delta": delta}
    if fam == "clustered":
        cs = ClusteredDictSpec.uniform(
            n, spec.dict_param("clusters", 8, int), spec.dict_param("cluster_size", 6, int),
            spec.dict_param("epsilon", 0.01, float),
        )
        cd = clustered(cs, seed)
        return cd.dictionary, {"clustered": cd}
    if fam == "nullspace":
        rig = random_rig(spec.dict_param("q", 10, int), spec.dict_param("rig_seed", seed, int))
        phi, P = nullspace_dictionary(rig)
        return phi, {"rig": rig, "projector": P}
    if fam == "file":
        path = spec.dictionary.get("path")
        if not path:
            raise InvalidSpecError("family = file needs a path")
        return Dictionary(load_matrix(path), {"kind": "file", "path": path}), {}
    raise InvalidSpecError(f"unknown dictionary family {fam!r}")


VARIANTS = {
    "residual": {},
    "plain": {"residual": False},
    "helu": {"activation": "helu"},
    "quadratic": {"loss": "quadratic"},
}


def _bool(text) -> bool:
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def network_config(spec: ExperimentSpec, n: int, m: int, variant: str | None = None) -> netlab.NetworkConfig:
    s = spec.network
    kw = dict(
        input_dim=n,
        output_dim=m,
        depth=int(s.get("depth", 20)),
        hidden_width=int(s["hidden_width"]) if "hidden_width" in s else None,
        residual=_bool(s.get("residual", "true")),
        activation=s.get("activation", "relu"),
        sigma=float(s.get("sigma", 0.1)),
        loss=s.get("loss", "multilabel"),
        batch_norm=_bool(s.get("batch_norm", "true")),
        whiten_input=_bool(s.get("whiten_input", "true")),
    )
    if variant is not None:
        if variant not in VARIANTS:
            raise InvalidSpecError(f"unknown network variant {variant!r}; expected one of {sorted(VARIANTS)}")
        kw.update(VARIANTS[variant])
    return netlab.NetworkConfig(**kw)


def train_config(spec: ExperimentSpec) -> netlab.TrainConfig:
    t = spec.training
    base = netlab.TrainConfig()
    return netlab.TrainConfig(
        batch_size=int(t.get("batch_size", base.batch_size)),
        initial_lr=float(t.get("initial_lr", base.initial_lr)),
        lr_drop_factor=float(t.get("lr_drop_factor", base.lr_drop_factor)),
        drop_period_epochs=int(t.get("drop_period_epochs", base.drop_period_epochs)),
        total_epochs=int(t.get("epochs", base.total_epochs)),
        momentum=float(t.get("momentum", base.momentum)),
        weight_decay=float(t.get("weight_decay", base.weight_decay)),
        seed=derive_seed(spec.seed, "train", 1),
    )


def training_corpus(spec: ExperimentSpec, phi, law: AmplitudeLaw | None = None) -> Corpus:
    d = parse_int_list(spec.corpus.get("train_d", "1-10"))
    noise = spec.corpus.get("noise_std")
    return make_corpus(
        phi,
        int(spec.corpus.get("train_count", 50_000)),
        (min(d), max(d)),
        law or spec.law("train_law" if "train_law" in spec.corpus else "law"),
        derive_seed(spec.seed, "train"),
        float(noise) if noise else None,
    )


def train_network(spec: ExperimentSpec, phi, *, variant: str | None = None, law: AmplitudeLaw | None = None, log=None):
    """Train on a fresh corpus drawn from the spec; returns (network, trace, corpus)."""
    corpus = training_corpus(spec, phi, law)
    cfg = network_config(spec, corpus.Y.shape[1], corpus.X.shape[1], variant)
    net = netlab.init_network(cfg, derive_seed(spec.seed, "init"))
    target = corpus.X if cfg.loss == "quadratic" else corpus.S
    net, trace = netlab.train(net, corpus.Y, target, train_config(spec), log=log)
    return net, trace, corpus
