"""Run configuration: TOML files mapping onto the search, sim, and MPPI knobs.

A run directory gets a verbatim copy of its config plus a resolved JSON
snapshot, so every experiment is reproducible from its own artifacts.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib

    def _parse_toml(text: str) -> dict:
        return tomllib.loads(text)

else:
    import toml

    def _parse_toml(text: str) -> dict:
        return toml.loads(text)

from . import builtin_grammar_path
from .mppi import MppiConfig
from .objectives import ObjectiveSpec, make_objective
from .physics import SimConfig
from .search import ALGORITHMS, EpsilonSchedule, SearchConfig

ALGORITHM_ALIASES = {"dw": "discrete_weights"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    text: str
    path: Path | None
    algorithm: str
    episodes: int
    seed: int
    out_dir: Path
    grammar: str
    objectives: tuple[ObjectiveSpec, ...]
    search_kwargs: dict = field(default_factory=dict)
    mppi: MppiConfig = field(default_factory=MppiConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def resolve_grammar_path(self) -> Path:
        if self.grammar.startswith("builtin:"):
            return Path(str(builtin_grammar_path(self.grammar.split(":", 1)[1])))
        p = Path(self.grammar)
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        return p

    def search_config(self, seed: int | None = None, algorithm: str | None = None) -> SearchConfig:
        algo = normalize_algorithm(algorithm or self.algorithm)
        return SearchConfig(
            episodes=self.episodes,
            objectives=self.objectives,
            algorithm=algo,
            seed=self.seed if seed is None else seed,
            **self.search_kwargs,
        )

    def to_dict(self) -> dict:
        search = {
            k: asdict(v) if isinstance(v, EpsilonSchedule) else v
            for k, v in self.search_kwargs.items()
        }
        return {
            "algorithm": self.algorithm,
            "episodes": self.episodes,
            "seed": self.seed,
            "out_dir": str(self.out_dir),
            "grammar": self.grammar,
            "objectives": [asdict(o) for o in self.objectives],
            "search": search,
            "mppi": asdict(self.mppi),
            "sim": asdict(self.sim),
        }


def normalize_algorithm(name: str) -> str:
    name = ALGORITHM_ALIASES.get(name, name)
    if name not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {name!r}; choose from moghs, dw, random")
    return name


def _epsilon(table: dict) -> EpsilonSchedule:
    return EpsilonSchedule(
        start=float(table.get("start", 1.0)),
        end=float(table.get("end", 0.1)),
        anneal_frac=float(table.get("anneal_frac", 0.5)),
    )


def parse_run_config(text: str, path: Path | None = None) -> RunConfig:
    try:
        doc = _parse_toml(text)
    except Exception as e:
        raise ConfigError(f"config parse error: {e}")

    run = doc.get("run", {})
    search = dict(doc.get("search", {}))
    eps_table = search.pop("epsilon", None)

    objectives = []
    for entry in doc.get("objectives", []):
        entry = dict(entry)
        kind = entry.pop("kind", None)
        if kind is None:
            raise ConfigError("objective entry without a kind")
        try:
            objectives.append(make_objective(kind, **entry))
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e))
    if len(objectives) < 2:
        raise ConfigError("config needs at least two [[objectives]] entries")

    search_kwargs = {}
    for key in ("candidates", "opt_iter", "minibatch", "weight_minibatch", "max_retries"):
        if key in search:
            search_kwargs[key] = int(search.pop(key))
    if "learning_rate" in search:
        search_kwargs["learning_rate"] = float(search.pop("learning_rate"))
    if eps_table is not None:
        search_kwargs["epsilon"] = _epsilon(eps_table)
    if search:
        raise ConfigError(f"unknown [search] keys: {sorted(search)}")

    mppi_table = doc.get("mppi", {})
    try:
        mppi = MppiConfig(**mppi_table)
        sim = SimConfig(**doc.get("sim", {}))
    except TypeError as e:
        raise ConfigError(f"bad [mppi]/[sim] table: {e}")

    algorithm = normalize_algorithm(run.get("algorithm", "moghs"))
    cfg = RunConfig(
        text=text,
        path=path,
        algorithm=algorithm,
        episodes=int(run.get("episodes", 100)),
        seed=int(run.get("seed", 0)),
        out_dir=Path(run.get("out_dir", "runs/experiment")),
        grammar=doc.get("grammar", {}).get("path", "builtin:planar_crawler"),
        objectives=tuple(objectives),
        search_kwargs=search_kwargs,
        mppi=mppi,
        sim=sim,
    )
    return cfg


def load_run_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    return parse_run_config(text, path)
