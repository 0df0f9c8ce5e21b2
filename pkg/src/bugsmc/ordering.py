"""Prioritized topological sort and latent/observed grouping.

The sort emits parents before children and, whenever the ready set holds an
observed stochastic node, emits observed nodes before any unobserved
stochastic node (logical and constant nodes may interleave). Ties inside a
priority class break by ascending node id, i.e. declaration order, which pins
a unique deterministic arrangement.

Grouping merges maximal runs of consecutive unobserved (resp. observed)
stochastic nodes into alternating latent/observed groups. A leading observed
run (data with no latent ancestor) forms step 1 with an empty latent group;
a trailing latent run forms a final step with an empty observed group.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from .graph import CONSTANT, LOGICAL, STOCHASTIC, Graph


class CycleError(Exception):
    """Graph contains a cycle (unreachable after a successful compile)."""


_PRIORITY_OBSERVED = 0
_PRIORITY_LOGICAL = 1
_PRIORITY_CONSTANT = 2
_PRIORITY_LATENT = 3


def _priority(node) -> int:
    if node.kind == STOCHASTIC:
        return _PRIORITY_OBSERVED if node.observed else _PRIORITY_LATENT
    return _PRIORITY_LOGICAL if node.kind == LOGICAL else _PRIORITY_CONSTANT


def topological_sort_prioritized(graph: Graph) -> list[int]:
    """Full topological order of all nodes with measurement priority."""
    indegree = [len(n.parents) for n in graph.nodes]
    ready: list[tuple[int, int]] = []
    for node in graph.nodes:
        if indegree[node.id] == 0:
            heapq.heappush(ready, (_priority(node), node.id))
    order: list[int] = []
    while ready:
        _, nid = heapq.heappop(ready)
        order.append(nid)
        for child in graph.children[nid]:
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(ready, (_priority(graph.nodes[child]), child))
    if len(order) != len(graph.nodes):
        raise CycleError("graph contains a cycle")
    return order


@dataclass
class Step:
    latent: list[int]    # unobserved stochastic node ids, in sort order
    observed: list[int]  # observed stochastic node ids, in sort order


@dataclass
class Arrangement:
    """SMC-ready alternation of latent and observed stochastic groups.

    ``segments`` partitions the full sorted node list (including logical and
    constant nodes) by step: every non-stochastic node attaches to the step of
    the next stochastic node in the order, so walking a segment evaluates all
    dependencies before they are needed.
    """

    steps: list[Step]
    full_order: list[int]
    segments: list[list[int]]

    @property
    def n(self) -> int:
        return len(self.steps)


def group_nodes(sorted_ids: list[int], graph: Graph) -> Arrangement:
    """Group a prioritized topological order into alternating steps."""
    stoch = [nid for nid in sorted_ids if graph.nodes[nid].kind == STOCHASTIC]

    runs: list[tuple[bool, list[int]]] = []  # (observed?, node ids)
    for nid in stoch:
        observed = graph.nodes[nid].observed
        if runs and runs[-1][0] == observed:
            runs[-1][1].append(nid)
        else:
            runs.append((observed, [nid]))

    steps: list[Step] = []
    i = 0
    while i < len(runs):
        observed, ids = runs[i]
        if observed:
            steps.append(Step([], ids))
            i += 1
        elif i + 1 < len(runs) and runs[i + 1][0]:
            steps.append(Step(ids, runs[i + 1][1]))
            i += 2
        else:
            steps.append(Step(ids, []))
            i += 1

    if not steps:
        return Arrangement([], list(sorted_ids), [])

    # attach each node to the step of the next stochastic node in the order
    step_of: dict[int, int] = {}
    for t, step in enumerate(steps):
        for nid in step.latent + step.observed:
            step_of[nid] = t
    segments: list[list[int]] = [[] for _ in steps]
    pending: list[int] = []
    for nid in sorted_ids:
        if nid in step_of:
            t = step_of[nid]
            segments[t].extend(pending)
            segments[t].append(nid)
            pending = []
        else:
            pending.append(nid)
    if pending:
        segments[-1].extend(pending)
    return Arrangement(steps, list(sorted_ids), segments)


def arrange(graph: Graph) -> Arrangement:
    return group_nodes(topological_sort_prioritized(graph), graph)


def export_dot(graph: Graph, arrangement: Arrangement | None = None) -> str:
    """Graphviz text for the stochastic/logical subgraph.

    Constant nodes are omitted. With an arrangement, stochastic vertices are
    annotated with their step; observed vertices draw filled.
    """
    step_of: dict[int, int] = {}
    if arrangement is not None:
        for t, step in enumerate(arrangement.steps, start=1):
            for nid in step.latent + step.observed:
                step_of[nid] = t
    lines = ["digraph model {", "  rankdir=LR;"]
    include = [n for n in graph.nodes if n.kind in (STOCHASTIC, LOGICAL)]
    keep = {n.id for n in include}
    for node in include:
        attrs = [f'label="{node.name}"']
        if node.kind == LOGICAL:
            attrs.append("shape=box")
        if node.observed:
            attrs.append("style=filled")
            attrs.append("fillcolor=orange")
        if node.id in step_of:
            attrs[0] = f'label="{node.name}\\nstep {step_of[node.id]}"'
        lines.append(f"  n{node.id} [{', '.join(attrs)}];")
    for node in include:
        for pid in node.parents:
            if pid in keep:
                lines.append(f"  n{pid} -> n{node.id};")
    lines.append("}")
    return "\n".join(lines) + "\n"
