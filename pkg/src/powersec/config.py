"""Pipeline configuration: an INI-style file of ``key = value`` lines in sections.

``powersec print-config`` writes the full default configuration, which is also
the reference for every key.
"""
from __future__ import annotations

import configparser
import math
import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .ensemble import ALGORITHMS, EnsembleParams, default_params
from .powerflow import LoadModel, SolverSettings
from .scenarios import ScenarioConfig
from .security import SecurityWeights
from .tree import TreeParams

DEFAULT_SEED = 20160601
DISPLAY_NAMES = {"j48": "J48", "cart": "CART", "bagged_cart": "BCART", "random_forest": "RF",
                 "extra_trees": "ET", "adaboost": "AdaBoost", "sgb": "SGB"}


class ConfigError(ValueError):
    pass


def derive_seed(master_seed: int, purpose: str) -> int:
    """Independent 64-bit seed for one pipeline stage."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(zlib.crc32(purpose.encode()),))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


@dataclass(frozen=True)
class AlgorithmConfig:
    """Ensemble settings; ``mtry`` is ``all``, ``sqrt`` or a count."""

    n_trees: int
    criterion: str = "gini"
    max_depth: int | None = None
    min_samples_leaf: int = 1
    mtry: str = "all"
    threshold_mode: str = "exhaustive"
    bootstrap: bool = True
    sample_fraction: float = 1.0
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.mtry not in ("all", "sqrt") and not str(self.mtry).isdigit():
            raise ConfigError(f"mtry must be 'all', 'sqrt' or a positive count, got {self.mtry!r}")
        # surface invalid tree settings at load time
        self.resolve(490, 0)

    def resolve(self, n_features: int, master_seed: int) -> EnsembleParams:
        if self.mtry == "all":
            mtry = None
        elif self.mtry == "sqrt":
            mtry = max(1, math.isqrt(n_features))
        else:
            mtry = int(self.mtry)
        tp = TreeParams(self.criterion, self.max_depth, self.min_samples_leaf, mtry,
                        self.threshold_mode)
        return EnsembleParams(self.n_trees, tp, self.bootstrap, self.sample_fraction,
                              self.learning_rate, master_seed)


def _algorithm_default(name: str) -> AlgorithmConfig:
    p = default_params(name, 490)
    tp = p.tree_params
    mtry = "all" if tp.mtry is None else "sqrt"
    return AlgorithmConfig(p.n_trees, tp.criterion, tp.max_depth, tp.min_samples_leaf, mtry,
                           tp.threshold_mode, p.bootstrap, p.sample_fraction, p.learning_rate)


@dataclass(frozen=True)
class PipelineConfig:
    case: str = "ieee118"
    seed: int = DEFAULT_SEED
    workers: int = 1
    output_dir: str = "out"
    scenario: ScenarioConfig = ScenarioConfig()
    load_model: LoadModel = LoadModel()
    solver: SolverSettings = SolverSettings()
    weights: SecurityWeights = SecurityWeights()
    write_raw_states: bool = False
    test_fraction: float = 0.1996
    algorithms: tuple[str, ...] = ALGORITHMS
    algorithm_params: dict = field(default_factory=lambda: {a: _algorithm_default(a)
                                                            for a in ALGORITHMS})
    gap_fractions: tuple[float, ...] = (0.1, 0.3, 0.5)
    gap_algorithm: str = "random_forest"
    curve_algorithm: str = "random_forest"

    def __post_init__(self):
        if not self.algorithms:
            raise ConfigError("no algorithm selected")
        for a in self.algorithms + (self.gap_algorithm, self.curve_algorithm):
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; choose from {', '.join(ALGORITHMS)}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("split.test_fraction must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")

    def scenario_config(self) -> ScenarioConfig:
        return replace(self.scenario, master_seed=derive_seed(self.seed, "scenario"))

    def split_seed(self) -> int:
        return derive_seed(self.seed, "split")

    def gap_seed(self, fraction: float) -> int:
        return derive_seed(self.seed, f"gaps:{fraction!r}")

    def ensemble_params(self, algorithm: str, n_features: int) -> EnsembleParams:
        return self.algorithm_params[algorithm].resolve(
            n_features, derive_seed(self.seed, f"train:{algorithm}"))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _parse(text: str, like, key: str):
    t = text.strip()
    if isinstance(like, bool):
        if t.lower() in ("true", "yes", "1", "on"):
            return True
        if t.lower() in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {text!r}")
    try:
        if isinstance(like, int):
            return int(t)
        if isinstance(like, float):
            return float(t)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None
    return t


_SCALARS = {  # section -> {key: attribute}
    "run": {"seed": "seed", "workers": "workers", "output_dir": "output_dir"},
    "case": {"path": "case"},
    "split": {"test_fraction": "test_fraction"},
    "gaps": {"algorithm": "gap_algorithm"},
    "curves": {"algorithm": "curve_algorithm"},
    "scenario": {"write_raw_states": "write_raw_states"},
}
_NESTED = {"scenario": "scenario", "load_model": "load_model", "solver": "solver",
           "security": "weights"}
_SCENARIO_SKIP = {"master_seed"}  # derived from run.seed


def dump_config(cfg: PipelineConfig) -> str:
    out = ["# powersec pipeline configuration", ""]

    def section(name, pairs):
        out.append(f"[{name}]")
        out.extend(f"{k} = {_fmt(v)}" for k, v in pairs)
        out.append("")

    section("run", [("seed", cfg.seed), ("workers", cfg.workers), ("output_dir", cfg.output_dir)])
    section("case", [("path", cfg.case)])
    section("scenario", [(f.name, getattr(cfg.scenario, f.name)) for f in fields(cfg.scenario)
                         if f.name not in _SCENARIO_SKIP]
            + [("write_raw_states", cfg.write_raw_states)])
    for sec in ("load_model", "solver", "security"):
        obj = getattr(cfg, _NESTED[sec])
        section(sec, [(f.name, getattr(obj, f.name)) for f in fields(obj)])
    section("split", [("test_fraction", cfg.test_fraction)])
    section("train", [("algorithms", cfg.algorithms)])
    for a in ALGORITHMS:
        p = cfg.algorithm_params[a]
        section(f"algorithm.{a}", [(f.name, getattr(p, f.name)) for f in fields(p)])
    section("gaps", [("fractions", cfg.gap_fractions), ("algorithm", cfg.gap_algorithm)])
    section("curves", [("algorithm", cfg.curve_algorithm)])
    return "\n".join(out)


def _nested_update(obj, items: dict, section: str):
    kw = {}
    names = {f.name: f for f in fields(obj)}
    for k, v in items.items():
        if k not in names:
            raise ConfigError(f"[{section}] unknown key {k!r}")
        cur = getattr(obj, k)
        if v.strip().lower() == "none":
            kw[k] = None
        elif cur is None:
            kw[k] = _parse(v, 0, f"{section}.{k}")
        else:
            kw[k] = _parse(v, cur, f"{section}.{k}")
    try:
        return replace(obj, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Apply the settings in ``text`` on top of ``base`` (defaults)."""
    cfg = base or PipelineConfig()
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    top: dict = {}
    nested = {}
    algo = dict(cfg.algorithm_params)
    for sec in cp.sections():
        items = dict(cp.items(sec))
        if sec.startswith("algorithm."):
            name = sec.split(".", 1)[1]
            if name not in algo:
                raise ConfigError(f"unknown algorithm section [{sec}]")
            algo[name] = _nested_update(algo[name], items, sec)
            continue
        if sec == "train":
            for k, v in items.items():
                if k != "algorithms":
                    raise ConfigError(f"[train] unknown key {k!r}")
                top["algorithms"] = tuple(s.strip() for s in v.split(",") if s.strip())
            continue
        if sec == "gaps" and "fractions" in items:
            try:
                top["gap_fractions"] = tuple(float(s) for s in items.pop("fractions").split(","))
            except ValueError:
                raise ConfigError("[gaps] fractions must be a comma-separated list") from None
        scal = _SCALARS.get(sec, {})
        rest = {}
        for k, v in items.items():
            if k in scal:
                attr = scal[k]
                top[attr] = _parse(v, getattr(cfg, attr), f"{sec}.{k}")
            else:
                rest[k] = v
        if rest:
            if sec not in _NESTED or (sec == "scenario" and _SCENARIO_SKIP & set(rest)):
                raise ConfigError(f"[{sec}] unknown key(s): {', '.join(sorted(rest))}")
            nested[_NESTED[sec]] = _nested_update(getattr(cfg, _NESTED[sec]), rest, sec)
    try:
        return replace(cfg, algorithm_params=algo, **top, **nested)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
