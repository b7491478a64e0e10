"""Batch analysis over entry points and report emission.

Ties the pipeline together: explore every entry point, match every
signature variant against every recovered graph, run the sequential
block permutation classifier, and aggregate the outcomes into a report
renderable as JSON, a text summary, or DOT.

The JSON layout keeps every wall-clock figure inside the single
top-level "timestamp" object.  Everything outside it is a pure function
of the inputs and the configuration, so two runs over the same corpus
can be compared byte for byte after dropping that one key.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from typing import Optional, Union

from .dfg import Dfg, NodeKind
from .matcher import classify_block_permutation, match_signature
from .sigdsl import SignatureDoc, SignatureGraph, build_variant
from .siglib import load_catalog
from .symexec import Config, explore

__all__ = [
    "AnalysisConfig",
    "AnalysisReport",
    "BlockPermRecord",
    "FunctionResult",
    "MalformedLineError",
    "SignatureResult",
    "UnknownFormatError",
    "analyze_binary",
    "compute_totals",
    "emit_report",
    "load_entries",
    "parse_report",
    "report_to_dict",
    "tool_version",
]

FORMATS = ("json", "text", "dot")

SCHEMA_VERSION = 1


class UnknownFormatError(ValueError):
    def __init__(self, fmt: str):
        self.format = fmt
        super().__init__(
            f"UNKNOWN_FORMAT: {fmt!r} (expected one of {', '.join(FORMATS)})")


class MalformedLineError(ValueError):
    def __init__(self, line: int, text: str):
        self.line = line
        self.text = text
        super().__init__(f"MALFORMED_LINE({line}): {text!r}")


def tool_version() -> str:
    try:
        return metadata.version("wherescrypto")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass(frozen=True)
class AnalysisConfig:
    """Knobs for one batch run.

    ``n`` is the loop iteration target handed to the path oracle,
    ``depth`` the call inlining budget, ``timeout`` the per-path
    exploration allowance in seconds (mapped onto a deterministic
    instruction budget by the executor).
    """

    n: int = 4
    depth: int = 2
    timeout: float = 10.0
    fork_cap: int = 64
    signature_paths: tuple[str, ...] = ()
    output_format: str = "json"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.depth < 0:
            raise ValueError("depth must not be negative")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.output_format not in FORMATS:
            raise UnknownFormatError(self.output_format)

    def symexec_config(self) -> Config:
        return Config(n=self.n, depth=self.depth, timeout=self.timeout,
                      fork_cap=self.fork_cap)


@dataclass
class SignatureResult:
    """Outcome of one signature document against one function.

    ``graph_hits`` records, per explored graph, whether any variant of
    the document embeds into it; ``matched`` is their disjunction.  The
    exemplar fields (graph_index, variant, assignment, clamps) describe
    the first embedding found.
    """

    name: str
    identifier: str
    matched: bool
    graph_hits: tuple[bool, ...] = ()
    graph_index: Optional[int] = None
    variant: Optional[str] = None
    mappings: int = 0
    assignment: tuple[tuple[int, int], ...] = ()
    clamps: tuple[tuple[str, str], ...] = ()
    elapsed: float = field(default=0.0, compare=False)


@dataclass
class BlockPermRecord:
    """One sequential-block-permutation finding on one graph."""

    graph_index: int
    anchor: int
    anchor_symbol: Optional[str]
    triple: tuple[int, int, int]
    offsets: tuple[int, int, int]
    path: tuple[tuple[str, str], ...]
    confirmed: bool


@dataclass
class FunctionResult:
    entry: int
    error: Optional[str] = None
    graphs: int = 0
    statuses: tuple[str, ...] = ()
    signatures: tuple[SignatureResult, ...] = ()
    block_permutation: tuple[BlockPermRecord, ...] = ()
    elapsed: float = field(default=0.0, compare=False)
    # live graphs for DOT emission; absent after a JSON round trip
    dfgs: tuple[Dfg, ...] = field(default=(), compare=False, repr=False)

    @property
    def matched_signatures(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.signatures if s.matched)


@dataclass
class AnalysisReport:
    version: str
    config: AnalysisConfig
    functions: tuple[FunctionResult, ...]
    totals: dict[str, int]
    wall_time: float = field(default=0.0, compare=False)
    created: str = field(default="", compare=False)


def compute_totals(functions: tuple[FunctionResult, ...]) -> dict[str, int]:
    return {
        "functions": len(functions),
        "errors": sum(1 for f in functions if f.error is not None),
        "graphs": sum(f.graphs for f in functions),
        "matched_functions": sum(
            1 for f in functions if f.matched_signatures),
        "signature_matches": sum(
            len(f.matched_signatures) for f in functions),
        "block_permutations_confirmed": sum(
            1 for f in functions
            if any(r.confirmed for r in f.block_permutation)),
    }


BuiltCorpus = list[tuple[str, str, list[tuple[str, SignatureGraph]]]]


def _build_corpus(corpus: dict[str, SignatureDoc]) -> BuiltCorpus:
    """Builds every variant of every document once, in name order.

    Variants that purge to an empty graph (transient-only documents)
    are dropped: an empty pattern embeds nowhere meaningful and the
    matcher rejects it outright.
    """
    built: BuiltCorpus = []
    for name in sorted(corpus):
        doc = corpus[name]
        variants = []
        for variant in doc.variants:
            sig = build_variant(variant)
            if sig.graph.nodes:
                variants.append((variant.name, sig))
        built.append((name, doc.identifier, variants))
    return built


def _match_document(variants: list[tuple[str, SignatureGraph]],
                    paths) -> tuple[list[bool], Optional[tuple]]:
    """Scans every graph; returns per-graph hit flags and the first
    embedding as (graph index, variant name, count, assignment, clamps).
    """
    hits = []
    first = None
    for index, path in enumerate(paths):
        hit = False
        for vname, sig in variants:
            found = match_signature(sig, path.graph)
            if found:
                hit = True
                if first is None:
                    exemplar = found[0]
                    assignment = tuple(sorted(
                        (s, t) for s, t in exemplar.assignment.items()))
                    clamps = tuple(sorted(
                        (label, kind.name)
                        for label, kind in exemplar.clamp_bindings.items()))
                    first = (index, vname, len(found), assignment, clamps)
                break
        hits.append(hit)
    return hits, first


def _analyze_function(image: bytes, base: int, entry: int,
                      config: AnalysisConfig,
                      built: BuiltCorpus) -> FunctionResult:
    start = time.perf_counter()
    try:
        paths = explore(entry, image, config.symexec_config(), base=base)
    except Exception as exc:
        return FunctionResult(entry=entry,
                              error=f"{type(exc).__name__}: {exc}",
                              elapsed=time.perf_counter() - start)

    signatures = []
    for name, identifier, variants in built:
        sig_start = time.perf_counter()
        hits, first = _match_document(variants, paths)
        signatures.append(SignatureResult(
            name=name,
            identifier=identifier,
            matched=any(hits),
            graph_hits=tuple(hits),
            graph_index=first[0] if first else None,
            variant=first[1] if first else None,
            mappings=first[2] if first else 0,
            assignment=first[3] if first else (),
            clamps=first[4] if first else (),
            elapsed=time.perf_counter() - sig_start))

    records = []
    for index, path in enumerate(paths):
        for report in classify_block_permutation(path.graph):
            anchor_node = path.graph.nodes.get(report.anchor)
            records.append(BlockPermRecord(
                graph_index=index,
                anchor=report.anchor,
                anchor_symbol=anchor_node.symbol if anchor_node else None,
                triple=tuple(report.triple),
                offsets=tuple(report.offsets),
                path=tuple(tuple(step) for step in report.path_signature),
                confirmed=report.confirmed))

    return FunctionResult(
        entry=entry,
        graphs=len(paths),
        statuses=tuple(p.status.name for p in paths),
        signatures=tuple(signatures),
        block_permutation=tuple(records),
        elapsed=time.perf_counter() - start,
        dfgs=tuple(p.graph for p in paths))


def analyze_binary(image: bytes, base: int, entries: list[int],
                   config: Optional[AnalysisConfig] = None,
                   corpus: Optional[dict[str, SignatureDoc]] = None,
                   ) -> AnalysisReport:
    """Explores and matches every entry point; one failed function is
    recorded in place and never aborts the batch."""
    if config is None:
        config = AnalysisConfig()
    built = _build_corpus(load_catalog() if corpus is None else corpus)
    start = time.perf_counter()
    functions = tuple(_analyze_function(image, base, entry, config, built)
                      for entry in entries)
    return AnalysisReport(
        version=tool_version(),
        config=config,
        functions=functions,
        totals=compute_totals(functions),
        wall_time=time.perf_counter() - start,
        created=datetime.now(timezone.utc).isoformat())


def load_entries(path) -> list[int]:
    """One hex address per line; '#' starts a comment; blank lines
    ignored.  Result is sorted and deduplicated."""
    addresses = set()
    with open(path, "r", encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                value = int(text, 16)
            except ValueError:
                raise MalformedLineError(number, text) from None
            if value < 0:
                raise MalformedLineError(number, text)
            addresses.add(value)
    return sorted(addresses)


# --- emission -----------------------------------------------------------


def report_to_dict(report: AnalysisReport) -> dict:
    functions = []
    timing = []
    for fn in report.functions:
        signatures = [{
            "name": s.name,
            "identifier": s.identifier,
            "matched": s.matched,
            "graph_hits": list(s.graph_hits),
            "graph_index": s.graph_index,
            "variant": s.variant,
            "mappings": s.mappings,
            "assignment": [list(pair) for pair in s.assignment],
            "clamps": [list(pair) for pair in s.clamps],
        } for s in fn.signatures]
        permutation = [{
            "graph_index": r.graph_index,
            "anchor": r.anchor,
            "anchor_symbol": r.anchor_symbol,
            "triple": list(r.triple),
            "offsets": list(r.offsets),
            "path": [list(step) for step in r.path],
            "confirmed": r.confirmed,
        } for r in fn.block_permutation]
        functions.append({
            "entry": f"0x{fn.entry:x}",
            "error": fn.error,
            "graphs": fn.graphs,
            "statuses": list(fn.statuses),
            "signatures": signatures,
            "block_permutation": permutation,
        })
        timing.append({
            "elapsed": fn.elapsed,
            "signatures": {s.name: s.elapsed for s in fn.signatures},
        })
    return {
        "schema": SCHEMA_VERSION,
        "tool": "wherescrypto",
        "version": report.version,
        "config": {
            "n": report.config.n,
            "depth": report.config.depth,
            "timeout": report.config.timeout,
            "fork_cap": report.config.fork_cap,
            "signature_paths": list(report.config.signature_paths),
            "output_format": report.config.output_format,
        },
        "totals": dict(report.totals),
        "functions": functions,
        "timestamp": {
            "created": report.created,
            "wall_time": report.wall_time,
            "functions": timing,
        },
    }


def parse_report(data: Union[bytes, str, dict]) -> AnalysisReport:
    """Inverse of the JSON emission, minus the live graphs."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    if isinstance(data, str):
        data = json.loads(data)
    if data.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema: {data.get('schema')!r}")
    raw_config = data["config"]
    config = AnalysisConfig(
        n=raw_config["n"],
        depth=raw_config["depth"],
        timeout=raw_config["timeout"],
        fork_cap=raw_config["fork_cap"],
        signature_paths=tuple(raw_config["signature_paths"]),
        output_format=raw_config["output_format"])
    stamp = data["timestamp"]
    functions = []
    for raw_fn, raw_time in zip(data["functions"], stamp["functions"]):
        signatures = tuple(SignatureResult(
            name=s["name"],
            identifier=s["identifier"],
            matched=s["matched"],
            graph_hits=tuple(s["graph_hits"]),
            graph_index=s["graph_index"],
            variant=s["variant"],
            mappings=s["mappings"],
            assignment=tuple(tuple(pair) for pair in s["assignment"]),
            clamps=tuple(tuple(pair) for pair in s["clamps"]),
            elapsed=raw_time["signatures"].get(s["name"], 0.0),
        ) for s in raw_fn["signatures"])
        permutation = tuple(BlockPermRecord(
            graph_index=r["graph_index"],
            anchor=r["anchor"],
            anchor_symbol=r["anchor_symbol"],
            triple=tuple(r["triple"]),
            offsets=tuple(r["offsets"]),
            path=tuple(tuple(step) for step in r["path"]),
            confirmed=r["confirmed"],
        ) for r in raw_fn["block_permutation"])
        functions.append(FunctionResult(
            entry=int(raw_fn["entry"], 16),
            error=raw_fn["error"],
            graphs=raw_fn["graphs"],
            statuses=tuple(raw_fn["statuses"]),
            signatures=signatures,
            block_permutation=permutation,
            elapsed=raw_time["elapsed"]))
    return AnalysisReport(
        version=data["version"],
        config=config,
        functions=tuple(functions),
        totals=dict(data["totals"]),
        wall_time=stamp["wall_time"],
        created=stamp["created"])


def _emit_json(report: AnalysisReport) -> bytes:
    text = json.dumps(report_to_dict(report), indent=2)
    return (text + "\n").encode("utf-8")


def _emit_text(report: AnalysisReport) -> bytes:
    config = report.config
    lines = [
        f"wherescrypto {report.version}",
        f"config: n={config.n} depth={config.depth} "
        f"timeout={config.timeout:g}s fork_cap={config.fork_cap}",
        "",
    ]
    for fn in report.functions:
        if fn.error is not None:
            lines.append(f"function 0x{fn.entry:x}: ERROR {fn.error}")
            continue
        statuses = ", ".join(fn.statuses) if fn.statuses else "none"
        lines.append(f"function 0x{fn.entry:x}: {fn.graphs} graph(s) "
                     f"[{statuses}] in {fn.elapsed:.3f}s")
        for s in fn.signatures:
            if s.matched:
                lines.append(
                    f"  {s.name}: MATCH variant={s.variant} "
                    f"graph={s.graph_index} mappings={s.mappings} "
                    f"({s.elapsed:.3f}s)")
            else:
                lines.append(f"  {s.name}: no match ({s.elapsed:.3f}s)")
        for r in fn.block_permutation:
            state = "confirmed" if r.confirmed else "unconfirmed"
            anchor = r.anchor_symbol or f"node{r.anchor}"
            offsets = ", ".join(f"0x{k:x}" for k in r.offsets)
            lines.append(f"  block permutation: {state} anchor={anchor} "
                         f"offsets=[{offsets}] graph={r.graph_index}")
    totals = report.totals
    lines.append("")
    lines.append("totals: " + " ".join(
        f"{key}={value}" for key, value in totals.items()))
    lines.append(f"wall time: {report.wall_time:.3f}s")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _dot_label(node) -> str:
    if node.kind is NodeKind.CONST:
        return f"0x{node.const_value:x}"
    if node.symbol is not None:
        return node.symbol
    return node.kind.name


def _emit_dot(report: AnalysisReport) -> bytes:
    lines = []
    for fn in report.functions:
        if fn.error is not None:
            continue
        if fn.graphs and not fn.dfgs:
            raise ValueError(
                "DOT emission needs live graphs; this report was parsed "
                "from JSON and carries none")
        # target refs annotated by the exemplar embeddings, per graph
        annotations: dict[int, dict[int, list[str]]] = {}
        for s in fn.signatures:
            if not s.matched or s.graph_index is None:
                continue
            per_graph = annotations.setdefault(s.graph_index, {})
            for _sig_ref, target_ref in s.assignment:
                per_graph.setdefault(target_ref, []).append(
                    f"{s.name}/{s.variant}")
        for index, graph in enumerate(fn.dfgs):
            lines.append(f'digraph "f_0x{fn.entry:x}_g{index}" {{')
            marked = annotations.get(index, {})
            for ref in sorted(graph.nodes):
                node = graph.nodes[ref]
                attrs = [f'label="{_dot_label(node)}"']
                if ref in marked:
                    tags = ",".join(sorted(set(marked[ref])))
                    attrs.append('style=filled')
                    attrs.append('fillcolor="#f4cccc"')
                    attrs.append(f'match="{tags}"')
                lines.append(f"  n{ref} [{', '.join(attrs)}];")
            for ref in sorted(graph.nodes):
                for source in graph.nodes[ref].inputs:
                    lines.append(f"  n{source} -> n{ref};")
            lines.append("}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def emit_report(report: AnalysisReport, fmt: str) -> bytes:
    if fmt == "json":
        return _emit_json(report)
    if fmt == "text":
        return _emit_text(report)
    if fmt == "dot":
        return _emit_dot(report)
    raise UnknownFormatError(fmt)
