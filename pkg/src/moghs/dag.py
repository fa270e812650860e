"""Derivation-DAG store for visited designs.

Every partial or complete design visited by the search is one state, keyed
by its canonical hash so different rule orders merge.  Each state keeps the
Pareto set of reward vectors of its evaluated terminal descendants; reward
propagation runs upward through all ancestor paths on linking and on every
evaluation.  States whose descendants are all known-invalid are themselves
marked invalid and excluded from future sampling.

Scalarization targets use rewards affinely mapped to [0, 1] by running
per-objective bounds; raw rewards are kept for the archive and logs.
"""

from __future__ import annotations

import numpy as np

from .grammar import DesignGraph, Grammar, applicable_rules, apply_rule, canonical_key, is_terminal

REWARD_SET_CAP = 64


def scalarize(rewards, omega) -> np.ndarray:
    """Row-wise preference-weighted sums, bit-reproducible across array shapes.

    Elementwise multiply plus axis sum (not BLAS dot) so that a score
    computed on one vector equals the same row scored inside a batch.
    """
    r = np.atleast_2d(np.asarray(rewards, dtype=float))
    scores = (r * np.asarray(omega, dtype=float)).sum(axis=1)
    return scores if np.ndim(rewards) > 1 else scores[0]


class StateRecord:
    __slots__ = (
        "key",
        "design",
        "parents",
        "children",
        "invalid",
        "reward_set",
        "own_reward",
        "visits",
        "successors",
    )

    def __init__(self, key: bytes, design: DesignGraph):
        self.key = key
        self.design = design
        self.parents: set[int] = set()
        self.children: set[int] = set()
        self.invalid = False
        self.reward_set: list[np.ndarray] = []
        self.own_reward: np.ndarray | None = None
        self.visits = 0
        self.successors = None  # lazy [(key, design)] of one-step expansions


class DesignDag:
    def __init__(self, grammar: Grammar, m: int, cap: int = REWARD_SET_CAP):
        self.grammar = grammar
        self.m = m
        self.cap = cap
        self.states: list[StateRecord] = []
        self.by_key: dict[bytes, int] = {}
        self.reward_lo: np.ndarray | None = None
        self.reward_hi: np.ndarray | None = None
        self._pool: list[int] = []
        self._pool_set: set[int] = set()
        self._pool_dirty = False

    def __len__(self) -> int:
        return len(self.states)

    def get_or_insert(self, key: bytes, design: DesignGraph) -> int:
        sid = self.by_key.get(key)
        if sid is None:
            sid = len(self.states)
            self.states.append(StateRecord(key, design))
            self.by_key[key] = sid
        self.states[sid].visits += 1
        return sid

    def is_invalid(self, sid: int) -> bool:
        return self.states[sid].invalid

    def known_invalid(self, key: bytes) -> bool:
        sid = self.by_key.get(key)
        return sid is not None and self.states[sid].invalid

    def successors(self, sid: int):
        """One-step expansions as (key, design) pairs, cached per state."""
        st = self.states[sid]
        if st.successors is None:
            succs = []
            for app in applicable_rules(self.grammar, st.design):
                nxt = apply_rule(st.design, app)
                succs.append((canonical_key(nxt), nxt))
            st.successors = succs
        return st.successors

    def link(self, parent: int, child: int) -> None:
        st = self.states[parent]
        if child in st.children:
            return
        st.children.add(child)
        self.states[child].parents.add(parent)
        for v in list(self.states[child].reward_set):
            self._propagate_up(parent, v)

    def record_evaluation(self, sid: int, reward) -> None:
        st = self.states[sid]
        assert is_terminal(st.design), "only terminal designs are evaluated"
        assert not st.invalid, "evaluated an invalid-marked design"
        r = np.asarray(reward, dtype=float)
        self._note_reward(r)
        if st.own_reward is None:
            st.own_reward = r.copy()
        else:
            updated = np.maximum(st.own_reward, r)
            if np.array_equal(updated, st.own_reward):
                return  # dominated re-evaluation: no change anywhere
            st.own_reward = updated
        st.reward_set = [st.own_reward.copy()]
        self._pool_note(sid)
        for p in st.parents:
            self._propagate_up(p, st.own_reward)

    def target_value(self, sid: int, omega) -> np.ndarray | None:
        """Normalized reward of the descendant maximizing the scalarization.

        None when the state has no evaluated descendants (excluded from
        training batches).  Ties break toward the first-inserted vector.
        """
        out = self.target_values(sid, np.asarray(omega, dtype=float)[None, :])
        return None if out is None else out[0]

    def target_values(self, sid: int, omegas: np.ndarray) -> np.ndarray | None:
        """target_value for a whole [W, m] weight batch at once: [W, m]."""
        st = self.states[sid]
        if st.invalid or not st.reward_set:
            return None
        normed = self.normalize(np.array(st.reward_set))
        scores = (normed[:, None, :] * omegas[None, :, :]).sum(axis=2)  # [k, W]
        return normed[np.argmax(scores, axis=0)]

    def mark_invalid(self, sid: int) -> None:
        stack = [sid]
        while stack:
            s = stack.pop()
            st = self.states[s]
            if st.invalid:
                continue
            st.invalid = True
            st.reward_set = []
            st.own_reward = None
            self._pool_dirty = True
            for p in st.parents:
                if not self.states[p].invalid and self._all_successors_invalid(p):
                    stack.append(p)

    def training_pool(self) -> np.ndarray:
        """State ids with nonempty reward sets, in first-reward order."""
        if self._pool_dirty:
            self._pool = [s for s in self._pool if self.states[s].reward_set]
            self._pool_set = set(self._pool)
            self._pool_dirty = False
        return np.array(self._pool, dtype=np.int64)

    def normalize(self, rewards: np.ndarray) -> np.ndarray:
        """Affine map of raw rewards onto [0, 1] by the running bounds."""
        r = np.atleast_2d(np.asarray(rewards, dtype=float))
        if self.reward_lo is None:
            return np.full_like(r, 0.5)
        span = self.reward_hi - self.reward_lo
        out = np.empty_like(r)
        flat = span < 1e-12
        out[:, flat] = 0.5
        out[:, ~flat] = (r[:, ~flat] - self.reward_lo[~flat]) / span[~flat]
        return out if rewards.ndim > 1 else out[0]

    def _note_reward(self, r: np.ndarray) -> None:
        if self.reward_lo is None:
            self.reward_lo = r.copy()
            self.reward_hi = r.copy()
        else:
            np.minimum(self.reward_lo, r, out=self.reward_lo)
            np.maximum(self.reward_hi, r, out=self.reward_hi)

    def _pool_note(self, sid: int) -> None:
        if sid not in self._pool_set:
            self._pool_set.add(sid)
            self._pool.append(sid)

    def _merge(self, sid: int, v: np.ndarray) -> bool:
        st = self.states[sid]
        if st.invalid:
            return False
        for q in st.reward_set:
            if np.all(q >= v):
                return False
        st.reward_set = [q for q in st.reward_set if not (np.all(v >= q) and np.any(v > q))]
        st.reward_set.append(v.copy())
        if len(st.reward_set) > self.cap:
            self._crowding_prune(st)
        self._pool_note(sid)
        return True

    def _propagate_up(self, sid: int, v: np.ndarray) -> None:
        stack = [sid]
        while stack:
            s = stack.pop()
            if self._merge(s, v):
                stack.extend(self.states[s].parents)

    def _all_successors_invalid(self, sid: int) -> bool:
        succs = self.successors(sid)
        if not succs:
            return True  # nonterminal dead end: nothing derivable
        for key, _ in succs:
            child = self.by_key.get(key)
            if child is None or not self.states[child].invalid:
                return False
        return True

    def _crowding_prune(self, st: StateRecord) -> None:
        pts = np.array(st.reward_set)
        n, m = pts.shape
        crowd = np.zeros(n)
        for j in range(m):
            order = np.argsort(pts[:, j], kind="stable")
            span = pts[order[-1], j] - pts[order[0], j]
            crowd[order[0]] = crowd[order[-1]] = np.inf
            if span > 1e-12:
                gaps = (pts[order[2:], j] - pts[order[:-2], j]) / span
                crowd[order[1:-1]] += gaps
        drop = int(np.argmin(crowd))
        del st.reward_set[drop]
