import json

import numpy as np
import pytest

from moghs.dag import DesignDag, scalarize
from moghs.grammar import (
    applicable_rules,
    apply_rule,
    canonical_key,
    enumerate_designs,
    is_terminal,
    load_grammar,
    start_design,
)

DIAMOND_DOC = {
    "max_nodes": 8,
    "symbols": [
        {"name": "S", "terminal": False},
        {"name": "A", "terminal": False},
        {"name": "seg", "terminal": True},
    ],
    "rules": [
        {
            "lhs": "S",
            "rhs_nodes": [
                {"symbol": "seg", "length": 0.1, "radius": 0.01, "density": 1000.0, "torque_limit": 1.0},
                {"symbol": "A"},
                {"symbol": "A"},
            ],
            "rhs_edges": [[0, 1], [0, 2]],
            "boundary_map": {"parent": 0, "children": None},
        },
        {"lhs": "A", "rhs_nodes": [{"symbol": "seg", "length": 0.2, "radius": 0.01, "density": 1000.0, "torque_limit": 1.0}],
         "rhs_edges": [], "boundary_map": {"parent": 0, "children": None}},
        {"lhs": "A", "rhs_nodes": [{"symbol": "seg", "length": 0.3, "radius": 0.01, "density": 1000.0, "torque_limit": 1.0}],
         "rhs_edges": [], "boundary_map": {"parent": 0, "children": None}},
    ],
}


@pytest.fixture
def diamond_grammar():
    return load_grammar(json.dumps(DIAMOND_DOC))


def insert_design(dag, design):
    return dag.get_or_insert(canonical_key(design), design)


def random_walk(dag, grammar, rng):
    """Uniform-random derivation, inserting and linking every state."""
    d = start_design(grammar)
    sid = insert_design(dag, d)
    while not is_terminal(d):
        apps = applicable_rules(grammar, d)
        d = apply_rule(d, apps[rng.integers(len(apps))])
        child = insert_design(dag, d)
        dag.link(sid, child)
        sid = child
    return sid


def descendant_terminal_keys(grammar, design, memo=None):
    if memo is None:
        memo = {}
    k = canonical_key(design)
    if k in memo:
        return memo[k]
    if is_terminal(design):
        memo[k] = {k}
        return memo[k]
    out = set()
    for app in applicable_rules(grammar, design):
        out |= descendant_terminal_keys(grammar, apply_rule(design, app), memo)
    memo[k] = out
    return out


class TestGetOrInsert:
    def test_idempotent(self, tiny):
        dag = DesignDag(tiny, m=2)
        d = start_design(tiny)
        a = insert_design(dag, d)
        b = insert_design(dag, d)
        assert a == b and len(dag) == 1

    def test_isomorphic_derivations_merge(self, diamond_grammar):
        g = diamond_grammar
        dag = DesignDag(g, m=2)
        top = apply_rule(start_design(g), applicable_rules(g, start_design(g))[0])
        # expand the two A nodes in both orders toward [seg, 0.2, 0.3]
        paths = []
        for first_len in (0.2, 0.3):
            d = top
            for want in (first_len, 0.5 - first_len):
                app = next(
                    a for a in applicable_rules(g, d)
                    if a[1].rhs_nodes and abs(a[1].rhs_nodes[0].length - want) < 1e-9
                )
                d = apply_rule(d, app)
            paths.append(insert_design(dag, d))
        assert paths[0] == paths[1]

    def test_fresh_state_empty(self, tiny):
        dag = DesignDag(tiny, m=2)
        sid = insert_design(dag, start_design(tiny))
        assert dag.states[sid].reward_set == [] and not dag.is_invalid(sid)


class TestLinkPropagation:
    def test_child_rewards_reach_parent(self, tiny):
        dag = DesignDag(tiny, m=2)
        rng = np.random.default_rng(0)
        sid = random_walk(dag, tiny, rng)
        dag.record_evaluation(sid, (1.0, 2.0))
        root = dag.by_key[canonical_key(start_design(tiny))]
        assert any(np.array_equal(v, (1.0, 2.0)) for v in dag.states[root].reward_set)

    def test_linking_unevaluated_child_changes_nothing(self, tiny):
        dag = DesignDag(tiny, m=2)
        d = start_design(tiny)
        sid = insert_design(dag, d)
        nxt = apply_rule(d, applicable_rules(tiny, d)[0])
        child = insert_design(dag, nxt)
        dag.link(sid, child)
        assert dag.states[sid].reward_set == []

    def test_diamond_parents_both_hold_reward(self, diamond_grammar):
        g = diamond_grammar
        dag = DesignDag(g, m=2)
        top_design = apply_rule(start_design(g), applicable_rules(g, start_design(g))[0])
        top = insert_design(dag, top_design)
        parents = []
        bottom = None
        for first_len in (0.2, 0.3):
            d = top_design
            app = next(a for a in applicable_rules(g, d)
                       if abs(a[1].rhs_nodes[0].length - first_len) < 1e-9)
            mid_design = apply_rule(d, app)
            mid = insert_design(dag, mid_design)
            dag.link(top, mid)
            parents.append(mid)
            app2 = next(a for a in applicable_rules(g, mid_design)
                        if abs(a[1].rhs_nodes[0].length - (0.5 - first_len)) < 1e-9)
            bot_design = apply_rule(mid_design, app2)
            bottom = insert_design(dag, bot_design)
            dag.link(mid, bottom)
        dag.record_evaluation(bottom, (3.0, 1.0))
        for mid in parents:
            assert any(np.array_equal(v, (3.0, 1.0)) for v in dag.states[mid].reward_set)
        # brute force: every state's reward set comes from its descendants
        assert any(np.array_equal(v, (3.0, 1.0)) for v in dag.states[top].reward_set)


class TestRecordEvaluation:
    def test_elementwise_max(self, tiny):
        dag = DesignDag(tiny, m=2)
        sid = random_walk(dag, tiny, np.random.default_rng(1))
        dag.record_evaluation(sid, (3.0, 1.0))
        dag.record_evaluation(sid, (1.0, 3.0))
        assert np.array_equal(dag.states[sid].own_reward, (3.0, 3.0))
        assert len(dag.states[sid].reward_set) == 1

    def test_ancestor_chain_holds_or_dominates(self, tiny):
        dag = DesignDag(tiny, m=2)
        rng = np.random.default_rng(2)
        # force a full-length chain so there are 5+ ancestors
        while True:
            sid = random_walk(dag, tiny, rng)
            if len(dag.states[sid].design.nodes) == 6:
                break
        dag.record_evaluation(sid, (3.0, 1.0))
        dag.record_evaluation(sid, (1.0, 3.0))
        target = np.array((3.0, 3.0))
        count = 0
        for st in dag.states:
            if st.reward_set and canonical_key(st.design) != st.key:
                raise AssertionError
            if st.reward_set and _is_ancestor_design(tiny, st.design, dag.states[sid].design):
                assert any(np.all(v >= target) for v in st.reward_set)
                count += 1
        assert count >= 5

    def test_dominated_reevaluation_no_change(self, tiny):
        dag = DesignDag(tiny, m=2)
        sid = random_walk(dag, tiny, np.random.default_rng(3))
        dag.record_evaluation(sid, (3.0, 3.0))
        before = [
            (i, [tuple(v) for v in st.reward_set]) for i, st in enumerate(dag.states)
        ]
        dag.record_evaluation(sid, (1.0, 2.0))
        after = [
            (i, [tuple(v) for v in st.reward_set]) for i, st in enumerate(dag.states)
        ]
        assert before == after

    def test_monotone_in_every_coordinate(self, tiny):
        dag = DesignDag(tiny, m=3)
        sid = random_walk(dag, tiny, np.random.default_rng(4))
        rng = np.random.default_rng(5)
        prev = None
        for _ in range(20):
            dag.record_evaluation(sid, rng.normal(size=3))
            cur = dag.states[sid].own_reward.copy()
            if prev is not None:
                assert np.all(cur >= prev)
            prev = cur


class TestTargetValue:
    def _dag_with_set(self, tiny, vectors):
        dag = DesignDag(tiny, m=2)
        sid = insert_design(dag, start_design(tiny))
        for v in vectors:
            dag._note_reward(np.asarray(v, dtype=float))
            dag._merge(sid, np.asarray(v, dtype=float))
        return dag, sid

    def test_axis_weight_picks_extreme(self, tiny):
        dag, sid = self._dag_with_set(tiny, [(1.0, 3.0), (3.0, 1.0)])
        got = dag.target_value(sid, (1.0, 0.0))
        np.testing.assert_array_equal(got, dag.normalize(np.array([3.0, 1.0])))

    def test_symmetric_tie_first_inserted(self, tiny):
        dag, sid = self._dag_with_set(tiny, [(1.0, 3.0), (3.0, 1.0)])
        got = dag.target_value(sid, (0.5, 0.5))
        np.testing.assert_array_equal(got, dag.normalize(np.array([1.0, 3.0])))

    def test_empty_set_gives_none(self, tiny):
        dag = DesignDag(tiny, m=2)
        sid = insert_design(dag, start_design(tiny))
        assert dag.target_value(sid, (0.5, 0.5)) is None

    def test_matches_brute_force_over_shadow_list(self, tiny):
        rng = np.random.default_rng(6)
        dag = DesignDag(tiny, m=2)
        evaluated: dict[bytes, np.ndarray] = {}
        for _ in range(120):
            sid = random_walk(dag, tiny, rng)
            r = rng.uniform(-1, 5, size=2)
            dag.record_evaluation(sid, r)
            k = dag.states[sid].key
            evaluated[k] = np.maximum(evaluated.get(k, r), r)
        memo = {}
        for _ in range(100):
            sid = int(rng.integers(len(dag.states)))
            omega = rng.dirichlet(np.ones(2))
            keys = descendant_terminal_keys(tiny, dag.states[sid].design, memo)
            shadow = [evaluated[k] for k in keys if k in evaluated]
            got = dag.target_value(sid, omega)
            if not shadow:
                assert got is None
                continue
            best = max(scalarize(dag.normalize(np.array(shadow)), omega))
            assert scalarize(got, omega) == best

    def test_pareto_filter_never_changes_target(self, tiny):
        rng = np.random.default_rng(7)
        for trial in range(20):
            dag = DesignDag(tiny, m=3)
            sid = insert_design(dag, start_design(tiny))
            vectors = rng.uniform(0, 4, size=(30, 3))
            for v in vectors:
                dag._note_reward(v)
                dag._merge(sid, v)
            for _ in range(10):
                omega = rng.dirichlet(np.ones(3))
                got = dag.target_value(sid, omega)
                brute = max(scalarize(dag.normalize(vectors), omega))
                assert scalarize(got, omega) == brute


class TestMarkInvalid:
    def test_terminal_marked_and_excluded(self, tiny):
        dag = DesignDag(tiny, m=2)
        sid = random_walk(dag, tiny, np.random.default_rng(8))
        dag.mark_invalid(sid)
        assert dag.is_invalid(sid)
        assert dag.known_invalid(dag.states[sid].key)

    def test_partial_with_all_invalid_expansions(self, tiny):
        dag = DesignDag(tiny, m=2)
        # grow a maximal chain: 5 segs + C, whose only successors are 2 stops
        d = start_design(tiny)
        sid = insert_design(dag, d)
        while len(d.nodes) < tiny.max_nodes:
            app = next(a for a in applicable_rules(tiny, d) if len(a[1].rhs_nodes) == 2)
            d = apply_rule(d, app)
            child = insert_design(dag, d)
            dag.link(sid, child)
            sid = child
        succs = dag.successors(sid)
        assert len(succs) == 2 and all(is_terminal(s) for _, s in succs)
        for key, design in succs:
            cid = dag.get_or_insert(key, design)
            dag.link(sid, cid)
            dag.mark_invalid(cid)
        assert dag.is_invalid(sid)

    def test_partial_with_one_valid_expansion_stays(self, tiny):
        dag = DesignDag(tiny, m=2)
        d = start_design(tiny)
        sid = insert_design(dag, d)
        while len(d.nodes) < tiny.max_nodes:
            app = next(a for a in applicable_rules(tiny, d) if len(a[1].rhs_nodes) == 2)
            d = apply_rule(d, app)
            child = insert_design(dag, d)
            dag.link(sid, child)
            sid = child
        key, design = dag.successors(sid)[0]
        cid = dag.get_or_insert(key, design)
        dag.link(sid, cid)
        dag.mark_invalid(cid)
        assert not dag.is_invalid(sid)

    def test_exhaustive_ground_truth_with_synthetic_validity(self, tiny):
        # synthetic rule: terminal chains with 3+ bent links fail "simulation"
        def valid(design):
            bends = sum(1 for n in design.nodes if abs(n.attach_angle) > 1e-9)
            return bends < 3

        terminals, _ = enumerate_designs(tiny, cap=500)
        dag = DesignDag(tiny, m=2)
        rng = np.random.default_rng(9)
        evaluated = set()
        for _ in range(5000):
            d = start_design(tiny)
            sid = insert_design(dag, d)
            if dag.is_invalid(sid):
                break
            dead = False
            while not is_terminal(d):
                options = [
                    (k, des) for k, des in dag.successors(sid) if not dag.known_invalid(k)
                ]
                if not options:
                    dag.mark_invalid(sid)
                    dead = True
                    break
                k, d = options[rng.integers(len(options))]
                child = dag.get_or_insert(k, d)
                dag.link(sid, child)
                sid = child
            if dead:
                continue
            evaluated.add(dag.states[sid].key)
            if valid(d):
                dag.record_evaluation(sid, rng.uniform(size=2))
            else:
                dag.mark_invalid(sid)
        assert evaluated == set(terminals)  # full coverage reached
        memo = {}
        for st in dag.states:
            desc = descendant_terminal_keys(tiny, st.design, memo)
            truth = all(not valid(terminals[k]) for k in desc)
            assert st.invalid == truth

    def test_invalid_states_leave_training_pool(self, tiny):
        dag = DesignDag(tiny, m=2)
        sid = random_walk(dag, tiny, np.random.default_rng(10))
        dag.record_evaluation(sid, (1.0, 1.0))
        assert sid in dag.training_pool()
        dag.mark_invalid(sid)
        assert sid not in dag.training_pool()


def test_reward_set_cap_prunes_by_crowding(tiny):
    dag = DesignDag(tiny, m=2, cap=16)
    sid = insert_design(dag, start_design(tiny))
    theta = np.linspace(0, np.pi / 2, 40)
    for t in theta:
        v = np.array([np.cos(t), np.sin(t)])
        dag._note_reward(v)
        dag._merge(sid, v)
    kept = dag.states[sid].reward_set
    assert len(kept) == 16
    # extremes survive crowding pruning
    assert any(np.allclose(v, (1.0, 0.0)) for v in kept)
    assert any(np.allclose(v, (0.0, 1.0)) for v in kept)


def _is_ancestor_design(grammar, maybe_ancestor, descendant):
    return canonical_key(descendant) in descendant_terminal_keys(grammar, maybe_ancestor)
