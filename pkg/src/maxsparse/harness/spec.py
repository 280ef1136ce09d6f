"""Experiment specification files.

One INI-style file (``key = value`` under sections) drives every run::

    [experiment]
    kind = recovery_sweep
    seed = 0
    trials = 1000
    engines = iht, ista, network
    output = results/sweep

    [dictionary]
    family = decaying_spectrum
    n = 20
    m = 100

Command-line flags override the matching keys after loading.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..datagen import AmplitudeLaw

__all__ = ["KINDS", "InvalidSpecError", "ExperimentSpec", "load_spec", "parse_spec", "parse_int_list"]

KINDS = ("recovery_sweep", "ablation", "cor3_study", "aiht_study", "stereo_study", "train")


class InvalidSpecError(ValueError):
    pass


def parse_int_list(text) -> tuple[int, ...]:
    """``"1-10"``, ``"3, 5, 7"`` or ``"1-3, 8"`` to a sorted tuple."""
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    out = set()
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if part[0] != "-" else part[1:].split("-", 1)
            out.update(range(int(lo), int(hi) + 1))
        else:
            out.add(int(part))
    return tuple(sorted(out))


def _floats(text) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _names(text) -> tuple[str, ...]:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    engines: tuple[str, ...]
    seed: int = 0
    trials: int = 100
    d_values: tuple[int, ...] = (1,)
    output: str = "results"
    threads: int = 1
    name: str = "experiment"
    timing_samples: int = 0
    dictionary: dict = field(default_factory=dict)
    corpus: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    solvers: dict = field(default_factory=dict)
    study: dict = field(default_factory=dict)
    source: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpecError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.kind != "train" and not self.engines:
            raise InvalidSpecError("at least one engine is required")
        if self.trials < 1:
            raise InvalidSpecError("trials must be >= 1")
        if self.threads < 1:
            raise InvalidSpecError("threads must be >= 1")

    # typed accessors with defaults ------------------------------------------

    def dict_param(self, key, default=None, cast=str):
        return cast(self.dictionary[key]) if key in self.dictionary else default

    def law(self, key: str = "law") -> AmplitudeLaw:
        return AmplitudeLaw.parse(self.corpus.get(key, "uniform_gapped(low=0.1,high=0.5)"))

    def ista_lambdas(self) -> tuple[float, ...]:
        return _floats(self.solvers.get("ista_lambda", "1e-4, 1e-3, 1e-2, 1e-1"))

    def with_overrides(self, *, seed=None, output=None, engines=None, threads=None) -> "ExperimentSpec":
        kw = {}
        if seed is not None:
            kw["seed"] = int(seed)
        if output is not None:
            kw["output"] = str(output)
        if engines:
            kw["engines"] = _names(engines) if isinstance(engines, str) else tuple(engines)
        if threads is not None:
            kw["threads"] = int(threads)
        return replace(self, **kw)

    def to_ini(self) -> str:
        """Canonical text form; parsing it gives back an equal spec."""
        cp = configparser.ConfigParser(interpolation=None)
        cp["experiment"] = {
            "kind": self.kind,
            "name": self.name,
            "seed": str(self.seed),
            "trials": str(self.trials),
            "d": ", ".join(map(str, self.d_values)),
            "engines": ", ".join(self.engines),
            "output": self.output,
            "threads": str(self.threads),
            "timing_samples": str(self.timing_samples),
        }
        for section in ("dictionary", "corpus", "network", "training", "solvers", "study"):
            values = getattr(self, section)
            if values:
                cp[section] = {k: str(v) for k, v in sorted(values.items())}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def parse_spec(text: str) -> ExperimentSpec:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidSpecError(str(exc)) from exc
    if "experiment" not in cp:
        raise InvalidSpecError("missing [experiment] section")
    ex = cp["experiment"]
    try:
        return ExperimentSpec(
            kind=ex.get("kind", ""),
            engines=_names(ex.get("engines", "")),
            seed=ex.getint("seed", 0),
            trials=ex.getint("trials", 100),
            d_values=parse_int_list(ex.get("d", "1")),
            output=ex.get("output", "results"),
            threads=ex.getint("threads", 1),
            name=ex.get("name", "experiment"),
            timing_samples=ex.getint("timing_samples", 0),
            dictionary=dict(cp["dictionary"]) if "dictionary" in cp else {},
            corpus=dict(cp["corpus"]) if "corpus" in cp else {},
            network=dict(cp["network"]) if "network" in cp else {},
            training=dict(cp["training"]) if "training" in cp else {},
            solvers=dict(cp["solvers"]) if "solvers" in cp else {},
            study=dict(cp["study"]) if "study" in cp else {},
            source=text,
        )
    except ValueError as exc:
        if isinstance(exc, InvalidSpecError):
            raise
        raise InvalidSpecError(str(exc)) from exc


def load_spec(path) -> ExperimentSpec:
    return parse_spec(Path(path).read_text(encoding="utf-8"))
