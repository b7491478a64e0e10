"""Shared test utilities: randomized NodeSpec sequence driver and
signature/target pair generators for the matcher-versus-oracle battery.

Used by both the unit property tests and the acceptance suite.  The
spec generator sticks to structural node kinds: OPAQUE and CALL mint a
fresh serial per request by design (they are events/wildcards, not
expressions), so re-requesting their spec intentionally yields a new
node and they are exercised by their own tests instead.
"""

from __future__ import annotations

import random

from wherescrypto.dfg import COMMUTATIVE, Dfg, NodeKind, NodeSpec
from wherescrypto.sigdsl import SignatureGraph

_BINARY = [NodeKind.SHL, NodeKind.SHR, NodeKind.ROTATE, NodeKind.SUB]
_VARIADIC = [NodeKind.ADD, NodeKind.MULT, NodeKind.XOR, NodeKind.AND, NodeKind.OR]


def random_structural_spec(rng: random.Random, pool: list[int]) -> NodeSpec:
    roll = rng.random()
    if roll < 0.15 or len(pool) < 2:
        if rng.random() < 0.5:
            return NodeSpec(NodeKind.CONST, const_value=rng.choice(
                [0, 1, 2, 4, 0xFF, 0xFFFFFFFF, rng.getrandbits(32)]))
        return NodeSpec(NodeKind.INPUT, symbol=f"R{rng.randrange(13)}")
    if roll < 0.25:
        return NodeSpec(NodeKind.LOAD, (rng.choice(pool),))
    if roll < 0.35:
        return NodeSpec(NodeKind.STORE, (rng.choice(pool), rng.choice(pool)))
    if roll < 0.55:
        kind = rng.choice(_BINARY)
        return NodeSpec(kind, (rng.choice(pool), rng.choice(pool)))
    kind = rng.choice(_VARIADIC)
    arity = rng.randrange(2, 5)
    return NodeSpec(kind, tuple(rng.choice(pool) for _ in range(arity)))


def drive_spec_sequence(seed: int, count: int) -> Dfg:
    """Apply ``count`` random specs to a fresh graph, asserting
    idempotence after every single request.

    Two shapes of the property, both checked each step:

    * stability: re-requesting the very same spec returns the same ref;
    * respec idempotence: re-requesting the returned node's own spec
      returns that node again.

    The one carve-out: a returned LOAD node whose address has a memory
    binding to some other value.  Re-running its spec is then a fresh
    load and must forward to the currently bound value, not the stale
    node; that is the store-forwarding contract, and we assert exactly
    that instead.
    """
    rng = random.Random(seed)
    g = Dfg()
    pool: list[int] = []
    for _ in range(count):
        spec = random_structural_spec(rng, pool)
        ref = g.request_operation(spec)
        stable = g.request_operation(spec)
        assert stable == ref, f"unstable result for {spec}: {ref} != {stable}"
        node = g.node(ref)
        again = g.request_operation(g.respec(ref))
        if node.kind is NodeKind.LOAD:
            expect = g.store_map.get(node.inputs[0], ref)
        else:
            expect = ref
        assert again == expect, (
            f"idempotence violated for {g.respec(ref)}: "
            f"{expect} != {again}")
        pool.append(ref)
    g.check_consing_invariants()
    return g


# ----------------------------------------------------------------------
# random (signature, target) pairs within the exhaustive-oracle bounds

_CLAMP_NAMES = ("t", "u")
_SIG_OPS = (NodeKind.XOR, NodeKind.OR, NodeKind.AND, NodeKind.MULT,
            NodeKind.ADD, NodeKind.SHL, NodeKind.SHR, NodeKind.ROTATE,
            NodeKind.LOAD)


def _grow(g: Dfg, rng: random.Random, refs: list[int],
          clamp_map: dict[int, str]) -> int:
    kind = rng.choice(_SIG_OPS + (None,))
    if kind is None:
        count = rng.randint(0, min(2, len(refs)))
        args = tuple(rng.sample(refs, k=count))
        clamp = (rng.choice(_CLAMP_NAMES)
                 if rng.random() < 0.35 else None)
        ref = g.request_opaque(args, clamp=clamp)
        if clamp is not None:
            clamp_map[ref] = clamp
        return ref
    if kind is NodeKind.LOAD:
        return g.request_load(rng.choice(refs))
    if kind in (NodeKind.SHL, NodeKind.SHR, NodeKind.ROTATE):
        amount = g.request_constant(rng.randint(1, 31))
        return g.request_operation(
            NodeSpec(kind, (rng.choice(refs), amount)))
    return g.request_operation(
        NodeSpec(kind, (rng.choice(refs), rng.choice(refs))))


def random_signature(rng: random.Random) -> SignatureGraph:
    """A small random SignatureGraph with occasional clamp labels and
    transient markings."""
    while True:
        g = Dfg()
        clamp_map: dict[int, str] = {}
        refs: list[int] = []
        for _ in range(rng.randint(1, 2)):
            roll = rng.random()
            if roll < 0.45:
                clamp = (rng.choice(_CLAMP_NAMES)
                         if rng.random() < 0.4 else None)
                ref = g.request_opaque((), clamp=clamp)
                if clamp is not None:
                    clamp_map[ref] = clamp
            elif roll < 0.75:
                ref = g.request_constant(rng.choice((1, 2, 3, 0xFF)))
            else:
                ref = g.request_input(rng.choice("AB"))
            refs.append(ref)
        for _ in range(rng.randint(1, 4)):
            refs.append(_grow(g, rng, refs, clamp_map))
        if rng.random() < 0.5:
            g.purge([refs[-1]])
        if not 1 <= len(g.nodes) <= 8:
            continue
        transient = {r for r, n in g.nodes.items()
                     if n.kind in COMMUTATIVE and rng.random() < 0.35}
        return SignatureGraph(
            g, {r: lab for r, lab in clamp_map.items() if r in g},
            transient)


def random_target(rng: random.Random, sig: SignatureGraph) -> Dfg:
    """A target graph: either an embedding of the signature with noise
    and occasional widened commutative nodes, or independent noise."""
    while True:
        g = Dfg()
        refs: list[int] = []
        if rng.random() < 0.55:
            m: dict[int, int] = {}
            for s_ref in sorted(sig.graph.nodes):
                node = sig.graph.node(s_ref)
                if node.kind is NodeKind.OPAQUE:
                    roll = rng.random()
                    if roll < 0.4 and not node.inputs:
                        m[s_ref] = g.request_input(f"X{s_ref}")
                    elif roll < 0.55 and not node.inputs:
                        m[s_ref] = g.request_constant(rng.randint(0, 7))
                    else:
                        m[s_ref] = g.request_opaque(
                            tuple(m[i] for i in node.inputs))
                elif node.kind is NodeKind.CONST:
                    m[s_ref] = g.request_constant(node.const_value)
                elif node.kind is NodeKind.INPUT:
                    m[s_ref] = g.request_input(node.symbol)
                elif node.kind is NodeKind.LOAD:
                    m[s_ref] = g.request_load(m[node.inputs[0]])
                else:
                    ins = [m[i] for i in node.inputs]
                    if (node.kind in COMMUTATIVE
                            and rng.random() < 0.3):
                        ins.append(g.request_input(f"N{s_ref}"))
                    m[s_ref] = g.request_operation(
                        NodeSpec(node.kind, tuple(ins)))
            refs.extend(m.values())
        else:
            for _ in range(rng.randint(1, 3)):
                refs.append(g.request_input(rng.choice("ABX")))
        clamp_sink: dict[int, str] = {}
        for _ in range(rng.randint(0, 4)):
            refs.append(_grow(g, rng, refs, clamp_sink))
        if 1 <= len(g.nodes) <= 14:
            return g
