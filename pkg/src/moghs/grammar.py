"""Context-free graph grammar over tree-shaped link/joint designs.

A design is a directed tree of links; nonterminal nodes are placeholders
that rules replace with link fragments until only physical links remain.
Designs are value objects: rule application returns a fresh graph, and
structurally identical designs (up to child order and re-indexing) share a
canonical 128-bit key.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

JOINT_KINDS = ("fixed", "revolute")
ATTR_QUANTUM = 1e-6  # physical attributes are compared at micro-unit resolution


class GrammarError(ValueError):
    """Malformed grammar file or invariant violation."""


@dataclass(frozen=True)
class Symbol:
    id: int
    name: str
    terminal: bool


@dataclass(frozen=True)
class LinkNode:
    """One design node: a physical link, or a nonterminal placeholder.

    Nonterminal nodes carry all-zero physical fields; terminal nodes have
    positive length and density.  ``attach_angle`` is the joint rest angle
    relative to the parent link.
    """

    symbol: Symbol
    length: float = 0.0
    radius: float = 0.0
    density: float = 0.0
    attach_angle: float = 0.0
    joint_kind: str = "revolute"
    torque_limit: float = 0.0


@dataclass(frozen=True)
class DesignGraph:
    nodes: tuple[LinkNode, ...]
    edges: tuple[tuple[int, int], ...]
    root: int = 0

    def children_of(self, i: int) -> list[int]:
        return [c for p, c in self.edges if p == i]

    def parent_of(self, i: int):
        for p, c in self.edges:
            if c == i:
                return p
        return None


@dataclass(frozen=True)
class Rule:
    """Rewrite of one nonterminal node into a tree fragment.

    ``attach_parent`` is the fragment node that takes over the matched
    node's parent edge (the fragment's root); ``attach_children`` receives
    any existing children.  An empty fragment deletes the matched node and
    is only applicable to non-root leaves.
    """

    id: int
    lhs: Symbol
    rhs_nodes: tuple[LinkNode, ...]
    rhs_edges: tuple[tuple[int, int], ...]
    attach_parent: int | None
    attach_children: int | None


@dataclass(frozen=True)
class Grammar:
    symbols: tuple[Symbol, ...]
    rules: tuple[Rule, ...]
    max_nodes: int
    rules_by_lhs: dict = field(hash=False, compare=False, default_factory=dict)

    @property
    def start(self) -> Symbol:
        return next(s for s in self.symbols if s.name == "S")

    def symbol(self, name: str) -> Symbol:
        for s in self.symbols:
            if s.name == name:
                return s
        raise KeyError(name)


def start_design(g: Grammar) -> DesignGraph:
    return DesignGraph(nodes=(LinkNode(symbol=g.start),), edges=(), root=0)


def is_terminal(d: DesignGraph) -> bool:
    return all(n.symbol.terminal for n in d.nodes)


def _check_tree(d: DesignGraph) -> None:
    n = len(d.nodes)
    if n < 1:
        raise GrammarError("design must have at least one node")
    parents = {}
    for p, c in d.edges:
        if p == c:
            raise GrammarError(f"self-edge on node {p}")
        if c in parents:
            raise GrammarError(f"node {c} has two parents")
        parents[c] = p
    if d.root in parents:
        raise GrammarError("root has a parent")
    seen = set()
    stack = [d.root]
    while stack:
        i = stack.pop()
        if i in seen:
            raise GrammarError("cycle detected")
        seen.add(i)
        stack.extend(d.children_of(i))
    if len(seen) != n:
        raise GrammarError("graph is not connected from the root")


def validate_design(d: DesignGraph) -> None:
    """Assert the directed-tree invariant; used liberally in tests."""
    _check_tree(d)


def applicable_rules(g: Grammar, d: DesignGraph) -> list[tuple[int, Rule]]:
    """Every (nonterminal node, matching rule) pair that respects max_nodes."""
    out = []
    n = len(d.nodes)
    for i, node in enumerate(d.nodes):
        if node.symbol.terminal:
            continue
        has_children = any(p == i for p, _ in d.edges)
        for rule in g.rules_by_lhs.get(node.symbol.name, ()):
            if not rule.rhs_nodes:
                if i == d.root or has_children:
                    continue
            elif has_children and rule.attach_children is None:
                continue
            if n - 1 + len(rule.rhs_nodes) > g.max_nodes:
                continue
            out.append((i, rule))
    return out


def apply_rule(d: DesignGraph, app: tuple[int, Rule]) -> DesignGraph:
    """Replace the matched node with the rule's fragment; ``d`` is unchanged."""
    idx, rule = app
    node = d.nodes[idx]
    assert not node.symbol.terminal and node.symbol.name == rule.lhs.name, "rule does not match node"
    keep = [i for i in range(len(d.nodes)) if i != idx]
    remap = {old: new for new, old in enumerate(keep)}
    base = len(keep)

    if not rule.rhs_nodes:
        assert idx != d.root and not d.children_of(idx), "empty fragment needs a non-root leaf"
        nodes = tuple(d.nodes[i] for i in keep)
        edges = tuple((remap[p], remap[c]) for p, c in d.edges if c != idx)
        return DesignGraph(nodes, edges, remap[d.root])

    nodes = tuple(d.nodes[i] for i in keep) + rule.rhs_nodes
    edges = []
    for p, c in d.edges:
        if c == idx:
            edges.append((remap[p], base + rule.attach_parent))
        elif p == idx:
            edges.append((base + rule.attach_children, remap[c]))
        else:
            edges.append((remap[p], remap[c]))
    edges.extend((base + a, base + b) for a, b in rule.rhs_edges)
    root = base + rule.attach_parent if idx == d.root else remap[d.root]
    return DesignGraph(tuple(nodes), tuple(edges), root)


def _node_bytes(n: LinkNode) -> bytes:
    q = lambda v: int(round(v / ATTR_QUANTUM))
    return struct.pack(
        "<iqqqqqB",
        n.symbol.id,
        q(n.length),
        q(n.radius),
        q(n.density),
        q(n.attach_angle),
        q(n.torque_limit),
        JOINT_KINDS.index(n.joint_kind),
    )


def canonical_key(d: DesignGraph) -> bytes:
    """128-bit structural hash, invariant under child order and re-indexing."""
    kids = {i: [] for i in range(len(d.nodes))}
    for p, c in d.edges:
        kids[p].append(c)

    def node_hash(i: int) -> bytes:
        h = hashlib.blake2b(digest_size=16)
        h.update(_node_bytes(d.nodes[i]))
        for ch in sorted(node_hash(c) for c in kids[i]):
            h.update(ch)
        return h.digest()

    top = hashlib.blake2b(digest_size=16)
    top.update(b"\x01" if is_terminal(d) else b"\x00")
    top.update(node_hash(d.root))
    return top.digest()


def _parse_node(obj, symbols_by_name, where: str) -> LinkNode:
    name = obj.get("symbol")
    if name not in symbols_by_name:
        raise GrammarError(f"{where}: unknown symbol {name!r}")
    sym = symbols_by_name[name]
    node = LinkNode(
        symbol=sym,
        length=float(obj.get("length", 0.0)),
        radius=float(obj.get("radius", 0.0)),
        density=float(obj.get("density", 0.0)),
        attach_angle=float(obj.get("attach_angle", 0.0)),
        joint_kind=obj.get("joint_kind", "revolute"),
        torque_limit=float(obj.get("torque_limit", 0.0)),
    )
    if node.joint_kind not in JOINT_KINDS:
        raise GrammarError(f"{where}: bad joint_kind {node.joint_kind!r}")
    if sym.terminal:
        if node.length <= 0 or node.density <= 0 or node.radius <= 0:
            raise GrammarError(f"{where}: terminal node {name!r} needs positive length/radius/density")
        if node.torque_limit < 0:
            raise GrammarError(f"{where}: negative torque_limit on {name!r}")
    else:
        if any((node.length, node.radius, node.density, node.attach_angle, node.torque_limit)):
            raise GrammarError(f"{where}: nonterminal node {name!r} must have zero physical fields")
    return node


def grammar_from_dict(doc: dict) -> Grammar:
    symbols = []
    for i, s in enumerate(doc.get("symbols", [])):
        symbols.append(Symbol(id=i, name=s["name"], terminal=bool(s["terminal"])))
    names = [s.name for s in symbols]
    if len(set(names)) != len(names):
        raise GrammarError("duplicate symbol names")
    starts = [s for s in symbols if s.name == "S"]
    if len(starts) != 1 or starts[0].terminal:
        raise GrammarError('grammar needs exactly one nonterminal start symbol "S"')
    by_name = {s.name: s for s in symbols}

    max_nodes = int(doc.get("max_nodes", 16))
    if max_nodes < 1:
        raise GrammarError("max_nodes must be >= 1")

    rules = []
    for rid, r in enumerate(doc.get("rules", [])):
        where = f"rule {rid}"
        lhs_name = r.get("lhs")
        if lhs_name not in by_name:
            raise GrammarError(f"{where}: unknown LHS symbol {lhs_name!r}")
        lhs = by_name[lhs_name]
        if lhs.terminal:
            raise GrammarError(f"{where}: LHS {lhs_name!r} is terminal")
        rhs_nodes = tuple(_parse_node(o, by_name, where) for o in r.get("rhs_nodes", []))
        rhs_edges = tuple((int(a), int(b)) for a, b in r.get("rhs_edges", []))
        bm = r.get("boundary_map", {})
        attach_parent = bm.get("parent")
        attach_children = bm.get("children")
        if rhs_nodes:
            if attach_parent is None or not 0 <= attach_parent < len(rhs_nodes):
                raise GrammarError(f"{where}: dangling boundary_map parent {attach_parent!r}")
            if attach_children is not None and not 0 <= attach_children < len(rhs_nodes):
                raise GrammarError(f"{where}: dangling boundary_map children {attach_children!r}")
            frag = DesignGraph(rhs_nodes, rhs_edges, root=attach_parent)
            try:
                _check_tree(frag)
            except GrammarError as e:
                raise GrammarError(f"{where}: fragment is not a tree rooted at the parent slot: {e}")
        elif attach_parent is not None or attach_children is not None:
            raise GrammarError(f"{where}: empty fragment cannot have boundary targets")
        rules.append(Rule(rid, lhs, rhs_nodes, rhs_edges, attach_parent, attach_children))

    rules_by_lhs: dict[str, list[Rule]] = {}
    for rule in rules:
        rules_by_lhs.setdefault(rule.lhs.name, []).append(rule)
    for s in symbols:
        if not s.terminal and s.name not in rules_by_lhs:
            raise GrammarError(f"dead-end nonterminal {s.name}")

    return Grammar(tuple(symbols), tuple(rules), max_nodes, rules_by_lhs)


def load_grammar(text: str) -> Grammar:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise GrammarError(f"parse error at line {e.lineno}, column {e.colno}: {e.msg}")
    return grammar_from_dict(doc)


def load_grammar_file(path) -> Grammar:
    with open(path) as fh:
        return load_grammar(fh.read())


def enumerate_designs(g: Grammar, cap: int = 100_000):
    """Exhaustive census of the grammar's terminal language.

    Returns (terminal designs by key, states visited).  DFS over rule
    applications with canonical-key deduplication, so counts are of
    isomorphism classes, not derivations.  Raises RuntimeError when more
    than ``cap`` terminal designs are found.
    """
    terminals: dict[bytes, DesignGraph] = {}
    seen: set[bytes] = set()
    d0 = start_design(g)
    stack = [d0]
    seen.add(canonical_key(d0))
    while stack:
        d = stack.pop()
        if is_terminal(d):
            terminals[canonical_key(d)] = d
            if len(terminals) > cap:
                raise RuntimeError(f"enumeration cap exceeded: more than {cap} terminal designs")
            continue
        for app in applicable_rules(g, d):
            nxt = apply_rule(d, app)
            k = canonical_key(nxt)
            if k not in seen:
                seen.add(k)
                stack.append(nxt)
    return terminals, len(seen)


def relabel(d: DesignGraph, perm) -> DesignGraph:
    """Re-index nodes by ``perm`` (new index of old node i is perm[i])."""
    nodes = [None] * len(d.nodes)
    for old, new in enumerate(perm):
        nodes[new] = d.nodes[old]
    edges = tuple((perm[p], perm[c]) for p, c in d.edges)
    return DesignGraph(tuple(nodes), edges, perm[d.root])
