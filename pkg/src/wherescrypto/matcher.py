"""Graph matching: subgraph embedding of signatures and a structural
classifier for chained compression functions.

Both the production matcher and the exhaustive oracle decide validity
with the same predicate (`_assignment_ok`), so the two can only
disagree on enumeration, never on acceptance.
"""

from __future__ import annotations

import itertools
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .dfg import COMMUTATIVE, Dfg, Node, NodeKind, NodeRef
from .sigdsl import SignatureGraph

__all__ = [
    "Mapping", "BlockPermReport", "SizeLimitError", "match_signature",
    "brute_force_match", "classify_block_permutation",
]


class SizeLimitError(Exception):
    pass


@dataclass
class Mapping:
    assignment: dict[NodeRef, NodeRef]
    clamp_bindings: dict[str, NodeKind] = field(default_factory=dict)

    def key(self) -> frozenset:
        return frozenset(self.assignment.items())


# ----------------------------------------------- the match predicate


def _node_tag_ok(s: Node, t: Node) -> bool:
    """Kind compatibility of a single node pair, ignoring edges."""
    if s.kind is NodeKind.OPAQUE:
        return True
    if s.kind is not t.kind:
        return False
    if s.kind is NodeKind.CONST:
        return s.const_value == t.const_value
    if s.kind is NodeKind.INPUT:
        return s.symbol == t.symbol
    return True


def _subset_arity(sig: SignatureGraph, ref: NodeRef, node: Node) -> bool:
    """True when the node may match a wider target node: wildcards
    always, commutative operations only when the statement that built
    them was transient (flattening in the target can widen those)."""
    if node.kind is NodeKind.OPAQUE:
        return True
    return node.kind in COMMUTATIVE and ref in sig.transient_set


def _inputs_ok(sig: SignatureGraph, s_ref: NodeRef, s: Node, t: Node,
               m: dict[NodeRef, NodeRef]) -> bool:
    mapped = [m[i] for i in s.inputs]
    if s.kind is NodeKind.OPAQUE or s.kind in COMMUTATIVE:
        want = Counter(mapped)
        have = Counter(t.inputs)
        if any(have[r] < c for r, c in want.items()):
            return False
        if _subset_arity(sig, s_ref, s):
            return len(t.inputs) >= len(s.inputs)
        return len(t.inputs) == len(s.inputs)
    # ordered operation: positional correspondence
    return tuple(mapped) == t.inputs


def _assignment_ok(sig: SignatureGraph, target: Dfg,
                   m: dict[NodeRef, NodeRef]) -> Optional[Mapping]:
    """Full validity check of a complete assignment; returns the
    Mapping (with clamp bindings) or None."""
    if len(set(m.values())) != len(m):
        return None
    for s_ref, t_ref in m.items():
        s = sig.graph.node(s_ref)
        t = target.node(t_ref)
        if not _node_tag_ok(s, t):
            return None
        if not _inputs_ok(sig, s_ref, s, t, m):
            return None
    bindings: dict[str, NodeKind] = {}
    for s_ref, label in sig.clamp_labels.items():
        tag = target.node(m[s_ref]).kind
        if bindings.setdefault(label, tag) is not tag:
            return None
    return Mapping(dict(m), bindings)


# ------------------------------------------------- exhaustive oracle


_BRUTE_SIG_LIMIT = 8
_BRUTE_TARGET_LIMIT = 14


def brute_force_match(sig: SignatureGraph,
                      target: Dfg) -> list[Mapping]:
    """Enumerates every injective assignment and filters through the
    predicate.

    Signature nodes are filled in ascending id order, which is
    topological, so when a node is placed its inputs already are; a
    placement violating the tag or input conjuncts of the predicate on
    decided values can never become valid later, and skipping it drops
    no assignments from the result.  Every completed assignment still
    goes through the full predicate."""
    sig_nodes = sorted(sig.graph.nodes)
    target_nodes = sorted(target.nodes)
    if len(sig_nodes) > _BRUTE_SIG_LIMIT:
        raise SizeLimitError(
            f"signature has {len(sig_nodes)} nodes, "
            f"limit {_BRUTE_SIG_LIMIT}")
    if len(target_nodes) > _BRUTE_TARGET_LIMIT:
        raise SizeLimitError(
            f"target has {len(target_nodes)} nodes, "
            f"limit {_BRUTE_TARGET_LIMIT}")

    out = []
    m: dict[NodeRef, NodeRef] = {}
    used: set[NodeRef] = set()

    def place(i: int) -> None:
        if i == len(sig_nodes):
            mapping = _assignment_ok(sig, target, m)
            if mapping is not None:
                out.append(mapping)
            return
        s_ref = sig_nodes[i]
        s = sig.graph.node(s_ref)
        for t_ref in target_nodes:
            if t_ref in used:
                continue
            t = target.node(t_ref)
            if not _node_tag_ok(s, t):
                continue
            m[s_ref] = t_ref
            if _inputs_ok(sig, s_ref, s, t, m):
                used.add(t_ref)
                place(i + 1)
                used.discard(t_ref)
            del m[s_ref]

    place(0)
    return out


# ----------------------------------------------- production matcher


def _initial_candidates(sig: SignatureGraph,
                        target: Dfg) -> dict[NodeRef, set[NodeRef]]:
    cands: dict[NodeRef, set[NodeRef]] = {}
    for s_ref, s in sig.graph.nodes.items():
        allowed: set[NodeRef] = set()
        subset = _subset_arity(sig, s_ref, s)
        for t_ref, t in target.nodes.items():
            if not _node_tag_ok(s, t):
                continue
            if subset:
                if len(t.inputs) < len(s.inputs):
                    continue
            elif len(t.inputs) != len(s.inputs):
                continue
            allowed.add(t_ref)
        cands[s_ref] = allowed
    return cands


def _refine(sig: SignatureGraph, target: Dfg,
            cands: dict[NodeRef, set[NodeRef]]) -> bool:
    """Iterated Ullmann refinement: a candidate survives only while
    every signature neighbor still has a compatible candidate adjacent
    to it.  Returns False if some signature node runs out.

    Runs as a worklist: when a candidate set shrinks, only the nodes
    whose support could depend on it are re-examined."""
    sig_uses: dict[NodeRef, list[tuple[NodeRef, int]]] = {
        r: [] for r in sig.graph.nodes}
    for c_ref, c in sig.graph.nodes.items():
        for pos, i in enumerate(c.inputs):
            sig_uses[i].append((c_ref, pos))

    plain_uses: dict[NodeRef, frozenset[NodeRef]] = {}
    uses_at: dict[tuple[NodeRef, int], set[NodeRef]] = {}
    for t_ref, t in target.nodes.items():
        for pos, i in enumerate(t.inputs):
            uses_at.setdefault((i, pos), set()).add(t_ref)
    for t_ref in target.nodes:
        plain_uses[t_ref] = frozenset(target.uses.get(t_ref, ()))

    def survives(s_ref: NodeRef, t_ref: NodeRef) -> bool:
        s = sig.graph.node(s_ref)
        t = target.node(t_ref)
        ordered = (s.kind is not NodeKind.OPAQUE
                   and s.kind not in COMMUTATIVE)
        for pos, a in enumerate(s.inputs):
            if ordered:
                if t.inputs[pos] not in cands[a]:
                    return False
            elif cands[a].isdisjoint(t.inputs):
                return False
        for c_ref, pos in sig_uses[s_ref]:
            c = sig.graph.node(c_ref)
            c_ordered = (c.kind is not NodeKind.OPAQUE
                         and c.kind not in COMMUTATIVE)
            if c_ordered:
                pool = uses_at.get((t_ref, pos))
            else:
                pool = plain_uses[t_ref]
            if not pool or pool.isdisjoint(cands[c_ref]):
                return False
        return True

    pending: set[NodeRef] = set(sig.graph.nodes)
    while pending:
        s_ref = pending.pop()
        doomed = [t_ref for t_ref in cands[s_ref]
                  if not survives(s_ref, t_ref)]
        if doomed:
            cands[s_ref].difference_update(doomed)
            if not cands[s_ref]:
                return False
            pending.update(sig.graph.node(s_ref).inputs)
            pending.update(c_ref for c_ref, _ in sig_uses[s_ref])
    return True


def _search(sig: SignatureGraph, target: Dfg,
            cands: dict[NodeRef, set[NodeRef]],
            limit: int) -> Iterator[Mapping]:
    """Backtracking over dynamically maintained domains.  Assigning a
    node immediately prunes the domains of its unassigned neighbors
    (and removes the chosen target from every other domain), so the
    most-constrained node is always picked next; a shared wildcard is
    collapsed as soon as the first structure around it is placed
    instead of being guessed at the end."""
    sig_nodes = sorted(sig.graph.nodes)
    sig_uses: dict[NodeRef, list[tuple[NodeRef, int]]] = {
        r: [] for r in sig_nodes}
    for c_ref, c in sig.graph.nodes.items():
        for pos, i in enumerate(c.inputs):
            sig_uses[i].append((c_ref, pos))

    uses_at: dict[tuple[NodeRef, int], frozenset[NodeRef]] = {}
    scratch: dict[tuple[NodeRef, int], set[NodeRef]] = {}
    for t_ref, t in target.nodes.items():
        for pos, i in enumerate(t.inputs):
            scratch.setdefault((i, pos), set()).add(t_ref)
    uses_at = {k: frozenset(v) for k, v in scratch.items()}
    plain_uses = {t_ref: frozenset(target.uses.get(t_ref, ()))
                  for t_ref in target.nodes}
    empty: frozenset[NodeRef] = frozenset()

    dom: dict[NodeRef, set[NodeRef]] = {r: set(cands[r])
                                        for r in sig_nodes}
    m: dict[NodeRef, NodeRef] = {}
    trail: list[list[tuple[NodeRef, set[NodeRef]]]] = []
    found = 0

    def prune(r: NodeRef, keep) -> bool:
        removed = {v for v in dom[r] if v not in keep}
        if removed:
            dom[r] -= removed
            trail[-1].append((r, removed))
        return bool(dom[r])

    def assign(s_ref: NodeRef, t_ref: NodeRef) -> bool:
        s = sig.graph.node(s_ref)
        t = target.node(t_ref)
        ordered = (s.kind is not NodeKind.OPAQUE
                   and s.kind not in COMMUTATIVE)
        for pos, a in enumerate(s.inputs):
            if a in m:
                continue
            keep = (t.inputs[pos],) if ordered else t.inputs
            if not prune(a, keep):
                return False
        for c_ref, pos in sig_uses[s_ref]:
            if c_ref in m:
                continue
            c = sig.graph.node(c_ref)
            c_ordered = (c.kind is not NodeKind.OPAQUE
                         and c.kind not in COMMUTATIVE)
            pool = (uses_at.get((t_ref, pos), empty) if c_ordered
                    else plain_uses[t_ref])
            if not prune(c_ref, pool):
                return False
        for r in sig_nodes:
            if r is not s_ref and r not in m and t_ref in dom[r]:
                dom[r].discard(t_ref)
                trail[-1].append((r, {t_ref}))
                if not dom[r]:
                    return False
        return True

    def step() -> Iterator[Mapping]:
        nonlocal found
        if found >= limit:
            return
        if len(m) == len(sig_nodes):
            mapping = _assignment_ok(sig, target, m)
            if mapping is not None:
                found += 1
                yield mapping
            return
        s_ref = min((r for r in sig_nodes if r not in m),
                    key=lambda r: (len(dom[r]), r))
        for t_ref in sorted(dom[s_ref]):
            m[s_ref] = t_ref
            trail.append([])
            if assign(s_ref, t_ref):
                yield from step()
            for r, removed in trail.pop():
                dom[r] |= removed
            del m[s_ref]
            if found >= limit:
                return

    yield from step()


def match_signature(sig: SignatureGraph, target: Dfg,
                    limit: int = 16) -> list[Mapping]:
    """Backtracking subgraph embedding with candidate refinement.

    Returns up to `limit` mappings; an empty list means no embedding
    exists."""
    if not sig.graph.nodes:
        raise ValueError("empty signature")
    if not target.nodes:
        return []
    cands = _initial_candidates(sig, target)
    if any(not c for c in cands.values()):
        return []
    if not _refine(sig, target, cands):
        return []
    return list(_search(sig, target, cands, limit))


# ------------------------------- chained compression classification


@dataclass
class BlockPermReport:
    anchor: NodeRef
    triple: tuple[NodeRef, NodeRef, NodeRef]
    offsets: tuple[int, int, int]
    path_signature: list[tuple[str, str]]
    confirmed: bool


def _offset_loads(target: Dfg) -> dict[NodeRef,
                                       list[tuple[int, NodeRef,
                                                  NodeRef]]]:
    """Group LOAD(ADD(x, k)) nodes by x as {x: [(k, load, addr)]}."""
    groups: dict[NodeRef, list[tuple[int, NodeRef, NodeRef]]] = {}
    for ref, node in target.nodes.items():
        if node.kind is not NodeKind.LOAD:
            continue
        addr = target.node(node.inputs[0])
        if addr.kind is not NodeKind.ADD or len(addr.inputs) != 2:
            continue
        a, b = addr.inputs
        if target.node(b).kind is NodeKind.CONST:
            base, k = a, target.node(b).const_value
        elif target.node(a).kind is NodeKind.CONST:
            base, k = b, target.node(a).const_value
        else:
            continue
        assert k is not None
        groups.setdefault(base, []).append((k, ref, node.inputs[0]))
    return groups


def _bfs_path(target: Dfg, start: NodeRef, goal: NodeRef,
              blocked: set[tuple[NodeRef, NodeRef]],
              ) -> Optional[list[tuple[NodeRef, str]]]:
    """Shortest undirected path as [(node, direction-of-arrival)],
    where 'fwd' follows data flow (operand to consumer) and 'rev' goes
    against it.  `blocked` lists undirected edges to avoid."""
    parents: dict[NodeRef, tuple[Optional[NodeRef], str]] = {
        start: (None, "")}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        if u == goal:
            path: list[tuple[NodeRef, str]] = []
            cur: Optional[NodeRef] = u
            while cur is not None:
                prev, direction = parents[cur]
                path.append((cur, direction))
                cur = prev
            path.reverse()
            return path
        steps = [(w, "fwd") for w in target.uses.get(u, ())]
        steps += [(w, "rev") for w in target.node(u).inputs]
        for w, direction in steps:
            if w in parents:
                continue
            if (u, w) in blocked or (w, u) in blocked:
                continue
            parents[w] = (u, direction)
            queue.append(w)
    return None


def _replay(target: Dfg, start: NodeRef, goal: NodeRef,
            signature: list[tuple[str, str]],
            blocked: set[tuple[NodeRef, NodeRef]]) -> Optional[
                list[NodeRef]]:
    """Walk every simple path from `start` whose edge directions and
    node kinds repeat `signature`; returns one that ends at `goal`."""

    def walk(u: NodeRef, depth: int,
             seen: set[NodeRef]) -> Optional[list[NodeRef]]:
        if depth == len(signature):
            return [u] if u == goal else None
        direction, kind_name = signature[depth]
        if direction == "fwd":
            options = target.uses.get(u, ())
        else:
            options = target.node(u).inputs
        for w in options:
            if w in seen:
                continue
            if (u, w) in blocked or (w, u) in blocked:
                continue
            if target.node(w).kind.name != kind_name:
                continue
            tail = walk(w, depth + 1, seen | {w})
            if tail is not None:
                return [u] + tail
        return None

    return walk(start, 0, {start})


_PROFILE_WILDCARDS = (NodeKind.CONST, NodeKind.LOAD)


def _kinds_correspond(p_kinds: list[NodeKind],
                      q_kinds: list[NodeKind]) -> bool:
    """Multiset correspondence where CONST and LOAD entries match
    anything on the other side."""
    if len(p_kinds) != len(q_kinds):
        return False
    p_hard = Counter(k for k in p_kinds if k not in _PROFILE_WILDCARDS)
    q_hard = Counter(k for k in q_kinds if k not in _PROFILE_WILDCARDS)
    overlap = p_hard & q_hard
    p_extra = sum((p_hard - overlap).values())
    q_extra = sum((q_hard - overlap).values())
    p_wild = len(p_kinds) - sum(p_hard.values())
    q_wild = len(q_kinds) - sum(q_hard.values())
    return p_extra <= q_wild and q_extra <= p_wild


def _profiles_match(target: Dfg, p: NodeRef, q: NodeRef) -> bool:
    pn, qn = target.node(p), target.node(q)
    p_in = [target.node(i).kind for i in pn.inputs]
    q_in = [target.node(i).kind for i in qn.inputs]
    if not _kinds_correspond(p_in, q_in):
        return False
    p_out = sorted(target.node(c).kind.name
                   for c in set(target.uses.get(p, ())))
    q_out = sorted(target.node(c).kind.name
                   for c in set(target.uses.get(q, ())))
    return p_out == q_out


def classify_block_permutation(target: Dfg) -> list[BlockPermReport]:
    """Detects two chained instances of an unknown compression
    function fed from equally spaced memory blocks.

    The shortest-path search refuses to step between an endpoint load
    and its own address node; without that, the trivial route through
    the shared address base would always win and say nothing about the
    computation.
    """
    reports: list[BlockPermReport] = []
    for anchor, entries in sorted(_offset_loads(target).items()):
        entries = sorted(entries)
        for (k0, v0, a0), (k1, v1, a1), (k2, v2, a2) in \
                itertools.combinations(entries, 3):
            if k1 - k0 < 16 or k1 - k0 != k2 - k1:
                continue
            blocked = {(v0, a0), (v1, a1), (v2, a2)}
            path = _bfs_path(target, v0, v1, blocked)
            if path is None:
                reports.append(BlockPermReport(
                    anchor, (v0, v1, v2), (k0, k1, k2), [], False))
                continue
            signature = [(direction, target.node(ref).kind.name)
                         for ref, direction in path[1:]]
            replay = _replay(target, v1, v2, signature, blocked)
            confirmed = replay is not None
            if confirmed:
                assert replay is not None
                first = [ref for ref, _ in path]
                profile_ok = all(
                    _profiles_match(target, p, q)
                    for p, q in zip(first, replay))
                confirmed = profile_ok
            reports.append(BlockPermReport(
                anchor, (v0, v1, v2), (k0, k1, k2), signature,
                confirmed))
    return reports
