"""Search drivers: preference-conditioned heuristic search plus baselines.

Every episode runs three phases.  Design: sample a preference weight, roll
out candidate designs by doubly epsilon-greedy rule selection against the
learned heuristic, insert every visited state into the derivation DAG.
Evaluation: score the chosen design once per objective (design-only
objectives skip the simulator).  Learning: regress the heuristic toward
the DAG's best-descendant targets over fresh design/weight minibatches.

The random baseline samples rules uniformly with no learning; the
discrete-weights baseline splits the episode budget over 11 fixed weights
and solves each as an independent single-objective search with a fresh
scalar-output heuristic.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dag import DesignDag, scalarize
from .grammar import Grammar, canonical_key, is_terminal, start_design
from .heuristic import (
    FeatureBatch,
    HeuristicParams,
    init_params,
    net_config_for,
    predict_batch,
    train_step_batch,
)
from .objectives import ObjectiveSpec
from .pareto import ParetoArchive

ALGORITHMS = ("moghs", "discrete_weights", "random")

# rng stream tags: one independent substream per (seed, episode, phase)
_INIT, _DESIGN, _EVAL, _LEARN, _OMEGA = 0, 1, 2, 3, 4

DISCRETE_WEIGHT_COUNT = 11


class DesignSpaceExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.1
    anneal_frac: float = 0.5

    def value(self, episode: int, total: int) -> float:
        ramp = max(1, int(self.anneal_frac * total))
        if episode >= ramp:
            return self.end
        return self.start + (self.end - self.start) * episode / ramp


@dataclass(frozen=True)
class SearchConfig:
    episodes: int
    objectives: tuple[ObjectiveSpec, ...]
    algorithm: str = "moghs"
    candidates: int = 16
    epsilon: EpsilonSchedule = EpsilonSchedule()
    opt_iter: int = 25
    minibatch: int = 32
    weight_minibatch: int = 10
    learning_rate: float = 1e-4
    seed: int = 0
    max_retries: int = 20

    def __post_init__(self):
        if self.episodes < 0 or self.candidates < 1 or self.weight_minibatch < 1:
            raise ValueError("bad search configuration")
        if len(self.objectives) < 2:
            raise ValueError("need at least two objectives")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")

    @property
    def m(self) -> int:
        return len(self.objectives)


@dataclass
class EpisodeRecord:
    index: int
    omega: tuple
    key: str
    rewards: tuple | None
    valid: bool
    eval_calls: int
    wall_time: float = 0.0
    phase_times: dict = field(default_factory=dict)

    def log_obj(self) -> dict:
        """Deterministic content only; timings are logged separately."""
        return {
            "episode": self.index,
            "omega": list(self.omega),
            "key": self.key,
            "rewards": None if self.rewards is None else list(self.rewards),
            "valid": self.valid,
            "eval_calls": self.eval_calls,
        }


@dataclass
class SearchResult:
    archive: ParetoArchive
    episodes: list[EpisodeRecord]
    all_rewards: list
    eval_calls: int
    dag: DesignDag | None = None
    heuristic: HeuristicParams | None = None
    subproblems: list | None = None
    exhausted: bool = False


def sample_weight(rng: np.random.Generator, m: int) -> np.ndarray:
    """Uniform draw from the (m-1)-simplex via sorted-uniform gaps."""
    if m < 2:
        raise ValueError("need at least two objectives")
    cuts = np.sort(rng.random(m - 1))
    return np.diff(np.concatenate(([0.0], cuts, [1.0])))


def _greedy_scores(preds: np.ndarray, omega, scalar: bool) -> np.ndarray:
    if scalar:
        return preds[:, 0]
    return scalarize(preds, omega)


def _argmax_random_ties(scores: np.ndarray, rng: np.random.Generator) -> int:
    """Greedy pick with uniform tie-breaking (an untrained head ties everywhere)."""
    ties = np.flatnonzero(scores == scores.max())
    if len(ties) == 1:
        return int(ties[0])
    return int(ties[rng.integers(len(ties))])


def rollout_design(
    grammar: Grammar,
    dag: DesignDag,
    heuristic: HeuristicParams | None,
    omega,
    eps: float,
    rng: np.random.Generator,
    max_retries: int = 20,
    scalar: bool = False,
    base_cache: dict | None = None,
) -> int:
    """Grow one terminal design from the start symbol.

    Each expansion is uniform-random with probability eps, otherwise the
    successor maximizing the scalarized heuristic.  Known-invalid successors
    are excluded everywhere; a state with no valid expansion is marked
    invalid and the rollout restarts.
    """
    d0 = start_design(grammar)
    k0 = canonical_key(d0)
    for attempt in range(max_retries):
        sid = dag.get_or_insert(k0, d0)
        if dag.is_invalid(sid):
            raise DesignSpaceExhausted("start state is invalid: design space exhausted")
        # retries explore progressively harder so a greedy policy cannot
        # funnel every restart into the same dead-end region
        attempt_eps = max(eps, min(1.0, 2.0 * attempt / max_retries))
        dead = False
        while not is_terminal(dag.states[sid].design):
            options = [(k, des) for k, des in dag.successors(sid) if not dag.known_invalid(k)]
            if not options:
                dag.mark_invalid(sid)
                dead = True
                break
            if heuristic is None or rng.random() < attempt_eps:
                pick = int(rng.integers(len(options)))
            else:
                preds = predict_batch(
                    heuristic, [(des, omega, k) for k, des in options], base_cache
                )
                pick = _argmax_random_ties(_greedy_scores(preds, omega, scalar), rng)
            key, des = options[pick]
            child = dag.get_or_insert(key, des)
            dag.link(sid, child)
            sid = child
        if not dead:
            return sid
    raise DesignSpaceExhausted(f"no valid design after {max_retries} rollout restarts")


def design_phase(
    grammar: Grammar,
    dag: DesignDag,
    heuristic: HeuristicParams | None,
    omega,
    eps: float,
    candidates: int,
    rng: np.random.Generator,
    max_retries: int = 20,
    scalar: bool = False,
    base_cache: dict | None = None,
) -> int:
    """Doubly epsilon-greedy: K rollouts, then greedy or random selection."""
    sids = [
        rollout_design(grammar, dag, heuristic, omega, eps, rng, max_retries, scalar, base_cache)
        for _ in range(candidates)
    ]
    if heuristic is None or rng.random() < eps:
        return sids[int(rng.integers(len(sids)))]
    items = [
        (dag.states[s].design, omega, dag.states[s].key) for s in sids
    ]
    preds = predict_batch(heuristic, items, base_cache)
    return sids[_argmax_random_ties(_greedy_scores(preds, omega, scalar), rng)]


class _EpisodeLoop:
    """Shared episode machinery; one instance per (sub)problem."""

    def __init__(self, cfg: SearchConfig, grammar: Grammar, evaluator, archive, result):
        self.cfg = cfg
        self.grammar = grammar
        self.evaluator = evaluator
        self.archive = archive
        self.result = result
        self.base_cache: dict = {}

    def run_episode(
        self,
        dag: DesignDag,
        heuristic: HeuristicParams | None,
        index: int,
        omega: np.ndarray,
        eps: float,
        scalar: bool = False,
        learn: bool = True,
        fixed_omega: np.ndarray | None = None,
        rollouts: int | None = None,
    ) -> EpisodeRecord:
        cfg = self.cfg
        t0 = time.perf_counter()
        rng_d = np.random.default_rng([cfg.seed, index, _DESIGN])
        sid = design_phase(
            self.grammar, dag, heuristic, omega, eps,
            rollouts if rollouts is not None else cfg.candidates,
            rng_d, cfg.max_retries, scalar, self.base_cache,
        )
        state = dag.states[sid]
        design = state.design
        t1 = time.perf_counter()

        results = []
        for oi, spec in enumerate(cfg.objectives):
            rng_e = np.random.default_rng([cfg.seed, index, _EVAL, oi])
            results.append(self.evaluator.evaluate(design, spec, rng_e))
        self.result.eval_calls += len(results)
        valid = all(r.valid for r in results)
        rewards = None
        if valid:
            raw = np.array([r.reward for r in results])
            dag.record_evaluation(sid, raw)
            self.archive.insert(state.key.hex(), state.own_reward.copy(), index)
            self.result.all_rewards.append(raw)
            rewards = tuple(float(v) for v in raw)
        else:
            dag.mark_invalid(sid)
        t2 = time.perf_counter()

        if learn and valid and heuristic is not None:
            self._learning_phase(dag, heuristic, index, fixed_omega)
        t3 = time.perf_counter()

        record = EpisodeRecord(
            index=index,
            omega=tuple(float(w) for w in omega),
            key=state.key.hex(),
            rewards=rewards,
            valid=valid,
            eval_calls=len(results),
            wall_time=t3 - t0,
            phase_times={"design": t1 - t0, "evaluate": t2 - t1, "learn": t3 - t2},
        )
        self.result.episodes.append(record)
        return record

    def _learning_phase(self, dag, heuristic, index, fixed_omega):
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, index, _LEARN])
        for _ in range(cfg.opt_iter):
            pool = dag.training_pool()
            if not len(pool):
                return
            sids = rng.choice(pool, size=cfg.minibatch, replace=len(pool) < cfg.minibatch)
            if fixed_omega is None:
                omegas = np.array([sample_weight(rng, cfg.m) for _ in range(cfg.weight_minibatch)])
            else:
                omegas = np.asarray(fixed_omega, dtype=float)[None, :]
            # duplicate minibatch picks collapse into sample weights
            uniq, counts = np.unique(sids, return_counts=True)
            designs = []
            targets = []
            for sid in uniq:
                st = dag.states[int(sid)]
                designs.append((st.design, st.key))
                tv = dag.target_values(int(sid), omegas)
                if fixed_omega is None:
                    targets.append(tv)
                else:
                    targets.append(scalarize(tv, fixed_omega)[:, None])
            weights = np.repeat(counts.astype(float), len(omegas))
            batch = FeatureBatch.build_grouped(designs, omegas, heuristic.cfg, self.base_cache)
            train_step_batch(heuristic, batch, np.vstack(targets), weights)


def run_search(cfg: SearchConfig, grammar: Grammar, evaluator, on_episode=None) -> SearchResult:
    """The main algorithm: one universal heuristic shared across weights."""
    archive = ParetoArchive(cfg.m)
    result = SearchResult(archive, [], [], 0)
    dag = DesignDag(grammar, cfg.m)
    net_cfg = net_config_for(grammar, cfg.m)
    heuristic = init_params(
        net_cfg, np.random.default_rng([cfg.seed, _INIT]), lr=cfg.learning_rate
    )
    result.dag = dag
    result.heuristic = heuristic
    loop = _EpisodeLoop(cfg, grammar, evaluator, archive, result)
    for ep in range(cfg.episodes):
        omega = sample_weight(np.random.default_rng([cfg.seed, ep, _OMEGA]), cfg.m)
        eps = cfg.epsilon.value(ep, cfg.episodes)
        try:
            record = loop.run_episode(dag, heuristic, ep, omega, eps)
        except DesignSpaceExhausted as e:
            warnings.warn(f"stopping early at episode {ep}: {e}")
            result.exhausted = True
            break
        if on_episode:
            on_episode(record)
    return result


def run_random_baseline(cfg: SearchConfig, grammar: Grammar, evaluator, on_episode=None) -> SearchResult:
    """Uniform-random rule choices, single rollout per episode, no learning."""
    archive = ParetoArchive(cfg.m)
    result = SearchResult(archive, [], [], 0)
    dag = DesignDag(grammar, cfg.m)
    result.dag = dag
    loop = _EpisodeLoop(cfg, grammar, evaluator, archive, result)
    for ep in range(cfg.episodes):
        omega = sample_weight(np.random.default_rng([cfg.seed, ep, _OMEGA]), cfg.m)
        try:
            record = loop.run_episode(
                dag, None, ep, omega, eps=1.0, learn=False, rollouts=1
            )
        except DesignSpaceExhausted as e:
            warnings.warn(f"stopping early at episode {ep}: {e}")
            result.exhausted = True
            break
        if on_episode:
            on_episode(record)
    return result


def discrete_weight_vectors(count: int = DISCRETE_WEIGHT_COUNT) -> list[np.ndarray]:
    return [np.array([i / (count - 1), 1.0 - i / (count - 1)]) for i in range(count)]


def split_budget(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def run_discrete_weights(cfg: SearchConfig, grammar: Grammar, evaluator, on_episode=None) -> SearchResult:
    """Eleven a-priori weights, each an independent scalarized search."""
    if cfg.m != 2:
        raise ValueError("the discrete-weights baseline needs exactly two objectives")
    archive = ParetoArchive(cfg.m)
    result = SearchResult(archive, [], [], 0, subproblems=[])
    loop = _EpisodeLoop(cfg, grammar, evaluator, archive, result)
    weights = discrete_weight_vectors()
    shares = split_budget(cfg.episodes, len(weights))
    net_cfg = net_config_for(grammar, cfg.m, out_dim=1)
    index = 0
    for sub, (omega, share) in enumerate(zip(weights, shares)):
        dag = DesignDag(grammar, cfg.m)
        heuristic = init_params(
            net_cfg, np.random.default_rng([cfg.seed, _INIT, sub]), lr=cfg.learning_rate
        )
        loop.base_cache = {}
        result.subproblems.append({"omega": omega, "dag": dag, "heuristic": heuristic})
        for local_ep in range(share):
            eps = cfg.epsilon.value(local_ep, share)
            try:
                record = loop.run_episode(
                    dag, heuristic, index, omega, eps, scalar=True, fixed_omega=omega
                )
            except DesignSpaceExhausted as e:
                warnings.warn(f"stopping early at episode {index}: {e}")
                result.exhausted = True
                return result
            index += 1
            if on_episode:
                on_episode(record)
    return result


def run(cfg: SearchConfig, grammar: Grammar, evaluator, on_episode=None) -> SearchResult:
    if cfg.algorithm == "moghs":
        return run_search(cfg, grammar, evaluator, on_episode)
    if cfg.algorithm == "discrete_weights":
        return run_discrete_weights(cfg, grammar, evaluator, on_episode)
    return run_random_baseline(cfg, grammar, evaluator, on_episode)
