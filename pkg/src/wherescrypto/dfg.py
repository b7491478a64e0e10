"""Data flow graph storage and the normalizing node broker.

A Dfg is a DAG whose vertices are operations or input values; an edge
v1 -> v2 means v1 is an input of operation v2.  All node creation goes
through the broker methods (request_*), which normalize the requested
specification with a small rewrite system and then hash-cons it, so any
two equivalent expressions are represented by the same node.  Node
equality therefore degenerates to id equality, and store-to-load
forwarding is a constant-time dictionary lookup on the address node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

MASK32 = 0xFFFFFFFF
MOD32 = 1 << 32

NodeRef = int


class NodeKind(Enum):
    CONST = "CONST"
    INPUT = "INPUT"
    ADD = "ADD"
    MULT = "MULT"
    XOR = "XOR"
    AND = "AND"
    OR = "OR"
    SHL = "SHL"
    SHR = "SHR"
    ROTATE = "ROTATE"
    SUB = "SUB"
    LOAD = "LOAD"
    STORE = "STORE"
    CALL = "CALL"
    OPAQUE = "OPAQUE"


#: Variadic, commutative operator kinds.  Inputs are kept sorted by id.
COMMUTATIVE = frozenset(
    {NodeKind.ADD, NodeKind.MULT, NodeKind.XOR, NodeKind.AND, NodeKind.OR}
)

#: Identity element per commutative kind (dropped when other inputs remain).
_IDENTITY = {
    NodeKind.ADD: 0,
    NodeKind.MULT: 1,
    NodeKind.XOR: 0,
    NodeKind.OR: 0,
    NodeKind.AND: MASK32,
}

#: Absorbing element per commutative kind (collapses the whole node).
_ZERO = {
    NodeKind.MULT: 0,
    NodeKind.AND: 0,
}


class GraphError(Exception):
    pass


class DeadNodeError(GraphError):
    """A spec referenced a NodeRef that is not live in the graph."""


@dataclass(frozen=True)
class NodeSpec:
    """A node request as handed to the broker (pre-normalization)."""

    kind: NodeKind
    inputs: tuple[NodeRef, ...] = ()
    const_value: Optional[int] = None
    symbol: Optional[str] = None
    clamp: Optional[str] = None


@dataclass(frozen=True)
class Node:
    """A live, normalized graph node.

    ``serial`` is only populated for OPAQUE and CALL nodes: both denote
    events/wildcards whose identity is not structural, so each request
    mints a fresh serial and they never hash-cons together.
    """

    id: NodeRef
    kind: NodeKind
    inputs: tuple[NodeRef, ...]
    const_value: Optional[int] = None
    symbol: Optional[str] = None
    clamp: Optional[str] = None
    serial: Optional[int] = None

    def cons_key(self):
        return (self.kind, self.inputs, self.const_value, self.symbol,
                self.clamp, self.serial)


def _spec_of(node: Node) -> NodeSpec:
    return NodeSpec(node.kind, node.inputs, node.const_value, node.symbol,
                    node.clamp)


class Dfg:
    """One data flow graph with its cons table and store map."""

    def __init__(self) -> None:
        self.nodes: dict[NodeRef, Node] = {}
        self.cons_table: dict[tuple, NodeRef] = {}
        self.store_map: dict[NodeRef, NodeRef] = {}
        self.roots: set[NodeRef] = set()
        self.uses: dict[NodeRef, list[NodeRef]] = {}
        self._next_id = 0
        self._next_serial = 0

    # ------------------------------------------------------------------
    # basic access

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, ref: NodeRef) -> bool:
        return ref in self.nodes

    def node(self, ref: NodeRef) -> Node:
        try:
            return self.nodes[ref]
        except KeyError:
            raise DeadNodeError(f"node {ref} is not live") from None

    def kind(self, ref: NodeRef) -> NodeKind:
        return self.node(ref).kind

    def is_const(self, ref: NodeRef, value: Optional[int] = None) -> bool:
        n = self.node(ref)
        if n.kind is not NodeKind.CONST:
            return False
        return value is None or n.const_value == value

    def const_value(self, ref: NodeRef) -> int:
        n = self.node(ref)
        if n.kind is not NodeKind.CONST:
            raise GraphError(f"node {ref} is {n.kind.value}, not CONST")
        assert n.const_value is not None
        return n.const_value

    def _check_live(self, refs: Iterable[NodeRef]) -> None:
        for r in refs:
            if r not in self.nodes:
                raise DeadNodeError(f"spec references dead node {r}")

    # ------------------------------------------------------------------
    # node creation

    def _insert(self, kind: NodeKind, inputs: tuple[NodeRef, ...],
                const_value: Optional[int] = None, symbol: Optional[str] = None,
                clamp: Optional[str] = None, serial: Optional[int] = None,
                ) -> NodeRef:
        key = (kind, inputs, const_value, symbol, clamp, serial)
        found = self.cons_table.get(key)
        if found is not None:
            return found
        ref = self._next_id
        self._next_id += 1
        node = Node(ref, kind, inputs, const_value, symbol, clamp, serial)
        self.nodes[ref] = node
        self.cons_table[key] = ref
        self.uses[ref] = []
        for i in inputs:
            self.uses[i].append(ref)
        return ref

    def request_constant(self, value: int) -> NodeRef:
        return self._insert(NodeKind.CONST, (), const_value=value & MASK32)

    def request_input(self, symbol: str) -> NodeRef:
        return self._insert(NodeKind.INPUT, (), symbol=symbol)

    def request_opaque(self, inputs: Iterable[NodeRef] = (),
                       clamp: Optional[str] = None) -> NodeRef:
        inputs = tuple(inputs)
        self._check_live(inputs)
        serial = self._next_serial
        self._next_serial += 1
        return self._insert(NodeKind.OPAQUE, inputs, clamp=clamp, serial=serial)

    def request_call(self, inputs: Iterable[NodeRef], target: Optional[int]) -> NodeRef:
        inputs = tuple(inputs)
        self._check_live(inputs)
        serial = self._next_serial
        self._next_serial += 1
        symbol = None if target is None else f"0x{target:x}"
        return self._insert(NodeKind.CALL, inputs, symbol=symbol, serial=serial)

    def request_operation(self, spec: NodeSpec) -> NodeRef:
        """Normalize ``spec`` to a fixed point of the rewrite system and
        return the (possibly pre-existing) node implementing it."""
        kind = spec.kind
        if kind is NodeKind.CONST:
            if spec.const_value is None:
                raise GraphError("CONST spec without a value")
            return self.request_constant(spec.const_value)
        if kind is NodeKind.INPUT:
            if not spec.symbol:
                raise GraphError("INPUT spec without a symbol")
            return self.request_input(spec.symbol)
        if kind is NodeKind.OPAQUE:
            return self.request_opaque(spec.inputs, spec.clamp)
        if kind is NodeKind.CALL:
            target = int(spec.symbol, 16) if spec.symbol else None
            return self.request_call(spec.inputs, target)

        inputs = tuple(spec.inputs)
        self._check_live(inputs)

        if kind is NodeKind.LOAD:
            if len(inputs) != 1:
                raise GraphError("LOAD takes exactly one input")
            return self.request_load(inputs[0])
        if kind is NodeKind.STORE:
            if len(inputs) != 2:
                raise GraphError("STORE takes (address, value)")
            return self.record_store(inputs[0], inputs[1])

        if kind in COMMUTATIVE:
            return self._build_commutative(kind, inputs)
        if kind in (NodeKind.SHL, NodeKind.SHR, NodeKind.ROTATE):
            if len(inputs) != 2:
                raise GraphError(f"{kind.value} takes (value, amount)")
            return self._build_shift(kind, inputs[0], inputs[1])
        if kind is NodeKind.SUB:
            if len(inputs) != 2:
                raise GraphError("SUB takes (minuend, subtrahend)")
            return self._build_sub(inputs[0], inputs[1])
        raise GraphError(f"unhandled kind {kind}")

    # ------------------------------------------------------------------
    # rewrite rules

    def _build_commutative(self, kind: NodeKind, inputs: tuple[NodeRef, ...]) -> NodeRef:
        if len(inputs) < 2:
            raise GraphError(f"{kind.value} needs at least 2 inputs")

        # (d) flatten same-kind children into one variadic node
        flat: list[NodeRef] = []
        for i in inputs:
            n = self.nodes[i]
            if n.kind is kind:
                flat.extend(n.inputs)
            else:
                flat.append(i)

        # (a)-(c) fold constants, drop the identity, collapse on zero
        acc = _IDENTITY[kind]
        rest: list[NodeRef] = []
        for i in flat:
            n = self.nodes[i]
            if n.kind is NodeKind.CONST:
                acc = _fold(kind, acc, n.const_value)
            else:
                rest.append(i)
        zero = _ZERO.get(kind)
        if zero is not None and acc == zero:
            return self.request_constant(zero)
        if not rest:
            return self.request_constant(acc)
        if acc != _IDENTITY[kind]:
            rest.append(self.request_constant(acc))
        if len(rest) == 1:
            return rest[0]

        # (e) doubling: ADD(x, x) -> MULT(x, 2)
        if kind is NodeKind.ADD and len(rest) == 2 and rest[0] == rest[1]:
            return self._build_commutative(
                NodeKind.MULT, (rest[0], self.request_constant(2)))

        # (g) distribute a constant multiplier over an addition
        if kind is NodeKind.MULT and len(rest) == 2:
            a, b = rest
            if self.nodes[a].kind is NodeKind.CONST:
                a, b = b, a
            if (self.nodes[b].kind is NodeKind.CONST
                    and self.nodes[a].kind is NodeKind.ADD):
                m = b
                terms = tuple(
                    self._build_commutative(NodeKind.MULT, (t, m))
                    for t in self.nodes[a].inputs)
                return self._build_commutative(NodeKind.ADD, terms)

        # (f) AND of a masked constant-amount rotate is really a shift:
        # with left-rotation semantics, the low r bits of ROTATE(x, r) are
        # the low r bits of SHR(x, 32-r).
        if kind is NodeKind.AND and len(rest) == 2:
            a, b = rest
            if self.nodes[a].kind is NodeKind.CONST:
                a, b = b, a
            bn = self.nodes[b]
            an = self.nodes[a]
            if (bn.kind is NodeKind.CONST and an.kind is NodeKind.ROTATE
                    and self.nodes[an.inputs[1]].kind is NodeKind.CONST):
                r = self.nodes[an.inputs[1]].const_value
                assert bn.const_value is not None and r is not None
                if 0 < r < 32 and bn.const_value < (1 << r):
                    shr = self._build_shift(
                        NodeKind.SHR, an.inputs[0], self.request_constant(32 - r))
                    return self._build_commutative(NodeKind.AND, (shr, b))

        rest.sort()
        return self._insert(kind, tuple(rest))

    def _build_shift(self, kind: NodeKind, value: NodeRef, amount: NodeRef) -> NodeRef:
        amt = self.nodes[amount]
        if kind is NodeKind.ROTATE and amt.kind is NodeKind.CONST:
            reduced = amt.const_value % 32
            if reduced != amt.const_value:
                amount = self.request_constant(reduced)
                amt = self.nodes[amount]
        if amt.kind is NodeKind.CONST:
            a = amt.const_value
            assert a is not None
            if a == 0:
                return value  # (b) shift/rotate by zero
            val = self.nodes[value]
            if val.kind is NodeKind.CONST:
                v = val.const_value
                assert v is not None
                if kind is NodeKind.SHL:
                    return self.request_constant(v << a if a < 32 else 0)
                if kind is NodeKind.SHR:
                    return self.request_constant(v >> a if a < 32 else 0)
                return self.request_constant(
                    ((v << a) | (v >> (32 - a))) & MASK32)
            if kind is NodeKind.SHL and a == 1:
                # (e) doubling
                return self._build_commutative(
                    NodeKind.MULT, (value, self.request_constant(2)))
        return self._insert(kind, (value, amount))

    def _build_sub(self, minuend: NodeRef, subtrahend: NodeRef) -> NodeRef:
        sn = self.nodes[subtrahend]
        if sn.kind is NodeKind.CONST:
            assert sn.const_value is not None
            # (h) x - c  ->  x + (2^32 - c); also folds the all-const case
            comp = (MOD32 - sn.const_value) % MOD32
            return self._build_commutative(
                NodeKind.ADD, (minuend, self.request_constant(comp)))
        return self._insert(NodeKind.SUB, (minuend, subtrahend))

    # ------------------------------------------------------------------
    # memory

    def record_store(self, addr: NodeRef, value: NodeRef) -> NodeRef:
        self._check_live((addr, value))
        ref = self._insert(NodeKind.STORE, (addr, value))
        self.store_map[addr] = value
        return ref

    def request_load(self, addr: NodeRef) -> NodeRef:
        self._check_live((addr,))
        forwarded = self.store_map.get(addr)
        if forwarded is not None:
            return forwarded
        return self._insert(NodeKind.LOAD, (addr,))

    # ------------------------------------------------------------------
    # purging and forking

    def purge(self, roots: Iterable[NodeRef]) -> "Dfg":
        """Drop every node that is neither a root nor an ancestor of one.

        Equivalent to iteratively deleting non-root leaves to a fixed
        point: a node survives iff some root reaches it through input
        edges.
        """
        roots = set(roots)
        self._check_live(roots)
        keep: set[NodeRef] = set()
        stack = list(roots)
        while stack:
            ref = stack.pop()
            if ref in keep:
                continue
            keep.add(ref)
            stack.extend(self.nodes[ref].inputs)
        for ref in [r for r in self.nodes if r not in keep]:
            node = self.nodes.pop(ref)
            del self.cons_table[node.cons_key()]
            del self.uses[ref]
        for ref, consumers in self.uses.items():
            self.uses[ref] = [c for c in consumers if c in keep]
        self.store_map = {a: v for a, v in self.store_map.items()
                          if a in keep and v in keep}
        self.roots = roots
        return self

    def fork_graph(self) -> "Dfg":
        """Independent copy sharing no mutable state; ids are preserved."""
        g = Dfg()
        g.nodes = dict(self.nodes)
        g.cons_table = dict(self.cons_table)
        g.store_map = dict(self.store_map)
        g.roots = set(self.roots)
        g.uses = {ref: list(consumers) for ref, consumers in self.uses.items()}
        g._next_id = self._next_id
        g._next_serial = self._next_serial
        return g

    # ------------------------------------------------------------------
    # serialization

    def serialize(self) -> str:
        """Canonical text form: one node per line, ordered by id.

        Creation order is topological (inputs are created before their
        consumers), so sorting by id preserves topology.
        """
        lines = []
        for ref in sorted(self.nodes):
            n = self.nodes[ref]
            args = ", ".join(str(i) for i in n.inputs)
            extra = []
            if n.kind is NodeKind.CONST:
                extra.append(f"0x{n.const_value:x}")
            if n.symbol is not None:
                extra.append(n.symbol)
            if n.serial is not None:
                extra.append(f"#{n.serial}")
            if n.clamp is not None:
                extra.append(f"clamp={n.clamp}")
            payload = f" [{' '.join(extra)}]" if extra else ""
            lines.append(f"{ref}: {n.kind.value}({args}){payload}")
        return "\n".join(lines)

    def check_consing_invariants(self) -> None:
        """Full-table scan asserting no two live nodes share a canonical
        specification and the cons table mirrors the node table."""
        seen: dict[tuple, NodeRef] = {}
        for ref, node in self.nodes.items():
            key = node.cons_key()
            if key in seen:
                raise GraphError(
                    f"nodes {seen[key]} and {ref} share spec {key}")
            seen[key] = ref
            if self.cons_table.get(key) != ref:
                raise GraphError(f"cons table out of sync for node {ref}")
        if len(self.cons_table) != len(self.nodes):
            raise GraphError("cons table has stale entries")

    def respec(self, ref: NodeRef) -> NodeSpec:
        """The spec a live node would be requested with (for idempotence
        checks: requesting respec(r) must return r)."""
        return _spec_of(self.node(ref))


def _fold(kind: NodeKind, a: int, b: int) -> int:
    if kind is NodeKind.ADD:
        return (a + b) & MASK32
    if kind is NodeKind.MULT:
        return (a * b) & MASK32
    if kind is NodeKind.XOR:
        return a ^ b
    if kind is NodeKind.AND:
        return a & b
    if kind is NodeKind.OR:
        return a | b
    raise GraphError(f"not foldable: {kind}")
