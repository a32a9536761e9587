"""Validated dataflow graph produced by the composition compiler."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .data import Kind
from .errors import CycleError

#: Pseudo-node that produces a composition's external input sets.
SOURCE = "@input"


class Distribution(str, enum.Enum):
    ALL = "all"
    EACH = "each"
    KEY = "key"


@dataclass(frozen=True)
class IRNode:
    id: str
    function: str
    kind: Kind
    inputs: tuple[tuple[str, bool], ...]   # (declared input set, optional)
    outputs: tuple[str, ...]

    def input_names(self):
        return [name for name, _ in self.inputs]


@dataclass(frozen=True)
class Edge:
    producer: str
    producer_set: str
    consumer: str
    consumer_set: str
    distribution: Distribution
    optional: bool = False


@dataclass
class CompositionIR:
    name: str
    nodes: list[IRNode]
    edges: list[Edge]
    source_sets: list[str]
    sink_sets: list[str]
    # sink name -> (producer node or SOURCE, producer set)
    sinks: dict[str, tuple[str, str]] = field(default_factory=dict)

    def node(self, node_id):
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def in_edges(self, node_id):
        return [e for e in self.edges if e.consumer == node_id]

    def out_edges(self, node_id, set_name=None):
        return [e for e in self.edges if e.producer == node_id
                and (set_name is None or e.producer_set == set_name)]

    def to_json(self):
        return {
            "name": self.name,
            "nodes": [{"id": n.id, "function": n.function, "kind": n.kind.value,
                       "inputs": [list(i) for i in n.inputs], "outputs": list(n.outputs)}
                      for n in self.nodes],
            "edges": [[e.producer, e.producer_set, e.consumer, e.consumer_set,
                       e.distribution.value, e.optional] for e in self.edges],
            "source_sets": self.source_sets,
            "sink_sets": self.sink_sets,
            "sinks": {k: list(v) for k, v in self.sinks.items()},
        }


def find_cycle(node_ids, edges):
    """Return one cycle as a list of node ids (first repeated at the end),
    or None when the graph is acyclic."""
    succ = {n: [] for n in node_ids}
    for e in edges:
        if e.producer in succ and e.consumer in succ:
            succ[e.producer].append(e.consumer)
    color = dict.fromkeys(node_ids, 0)
    for root in node_ids:
        if color[root]:
            continue
        stack = [(root, iter(succ[root]))]
        path = [root]
        color[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = 2
                stack.pop()
                path.pop()
            elif color[nxt] == 1:
                return path[path.index(nxt):] + [nxt]
            elif color[nxt] == 0:
                color[nxt] = 1
                stack.append((nxt, iter(succ[nxt])))
                path.append(nxt)
    return None


def topological_order(ir: CompositionIR) -> list[str]:
    """Kahn's algorithm; raises CycleError if the graph has a cycle."""
    ids = [n.id for n in ir.nodes]
    indeg = dict.fromkeys(ids, 0)
    succ = {n: [] for n in ids}
    for e in ir.edges:
        if e.producer == SOURCE:
            continue
        succ[e.producer].append(e.consumer)
        indeg[e.consumer] += 1
    ready = deque(n for n in ids if indeg[n] == 0)
    order = []
    while ready:
        n = ready.popleft()
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
    if len(order) != len(ids):
        raise CycleError(find_cycle(ids, [e for e in ir.edges if e.producer != SOURCE]) or ids)
    return order


def flatten(ir: CompositionIR, lookup_composition, _stack: tuple = ()) -> CompositionIR:
    """Substitute nested composition nodes with their (prefixed) graphs.

    Inner consumers of a nested composition's input set keep their own
    distribution keyword; the outer binding only decides which producer
    feeds them.
    """
    stack = _stack + (ir.name,)
    for n in ir.nodes:
        if n.kind is Kind.COMPOSITION and n.function in stack:
            raise CycleError(list(stack) + [n.function])
    subs = {n.id: flatten(lookup_composition(n.function), lookup_composition, stack)
            for n in ir.nodes if n.kind is Kind.COMPOSITION}
    if not subs:
        return ir

    def feed(node_id, set_name):
        for e in ir.edges:
            if e.consumer == node_id and e.consumer_set == set_name:
                return e.producer, e.producer_set
        raise KeyError(f"nested input {node_id}.{set_name} is unbound")

    def resolve(producer, pset):
        while producer in subs:
            inner, iset = subs[producer].sinks[pset]
            if inner == SOURCE:
                producer, pset = feed(producer, iset)   # pass-through input
            else:
                return f"{producer}/{inner}", iset
        return producer, pset

    nodes: list[IRNode] = []
    for n in ir.nodes:
        if n.id in subs:
            nodes.extend(IRNode(f"{n.id}/{sn.id}", sn.function, sn.kind, sn.inputs, sn.outputs)
                         for sn in subs[n.id].nodes)
        else:
            nodes.append(n)
    edges: list[Edge] = []
    for e in ir.edges:
        if e.consumer in subs:
            continue
        p, s = resolve(e.producer, e.producer_set)
        edges.append(Edge(p, s, e.consumer, e.consumer_set, e.distribution, e.optional))
    for nid, sub in subs.items():
        for se in sub.edges:
            if se.producer == SOURCE:
                p, s = resolve(*feed(nid, se.producer_set))
            else:
                p, s = f"{nid}/{se.producer}", se.producer_set
            edges.append(Edge(p, s, f"{nid}/{se.consumer}", se.consumer_set,
                              se.distribution, se.optional))
    sinks = {name: resolve(p, s) for name, (p, s) in ir.sinks.items()}
    return CompositionIR(ir.name, nodes, edges, list(ir.source_sets), list(ir.sink_sets), sinks)
