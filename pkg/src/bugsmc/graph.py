"""Directed acyclic graph of constant, logical, and stochastic nodes.

A compiled model holds one node per instantiated relation element: stochastic
nodes carry their distribution plus compiled parameter expressions, logical
nodes carry one compiled expression for the whole right-hand side, and maximal
all-constant subexpressions are folded into shared constant nodes that appear
as parents.

Runtime value layout is flat: a node value is a scalar (size 1) or a flat
vector of its element count, optionally with a leading particle axis, so a
scalar node holds ``(N,)`` and a k-element node ``(N, k)`` during inference.
Declared ``dims`` are kept as metadata for interface checks and for reshaping
arguments of user callbacks. Constant values never carry the particle axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .registry import DeterministicFunction, ExtensionError

CONSTANT = "constant"
LOGICAL = "logical"
STOCHASTIC = "stochastic"


class CompileError(Exception):
    """Model cannot be compiled against the supplied data."""

    def __init__(self, message: str, line: int | None = None,
                 column: int | None = None):
        pos = f"{line}:{column}: " if line is not None else ""
        super().__init__(f"{pos}{message}")
        self.message = message
        self.line = line
        self.column = column


def dims_size(dims: tuple[int, ...]) -> int:
    return int(np.prod(dims)) if dims else 1


# ---------------------------------------------------------------------------
# Compiled expressions
# ---------------------------------------------------------------------------

class ExprContext:
    """Parent values aligned with ``node.parents`` plus per-parent axis flags.

    Axis flags are the runtime truth: a statically stochastic parent may lose
    its particle axis when an inference routine conditions (clamps) it.
    """

    __slots__ = ("values", "has_axis", "n_particles")

    def __init__(self, values: list, has_axis: list, n_particles: int | None = None):
        self.values = values
        self.has_axis = has_axis
        self.n_particles = n_particles


class CompiledExpr:
    dims: tuple[int, ...] = ()
    has_axis: bool = False

    @property
    def size(self) -> int:
        return dims_size(self.dims)

    def eval(self, ctx: ExprContext):
        raise NotImplementedError

    def dynamic_axis(self, ctx: ExprContext) -> bool:
        """Whether this expression's value carries the particle axis now."""
        raise NotImplementedError


class ParentRef(CompiledExpr):
    """Reference to (an element of) a parent node's value."""

    __slots__ = ("slot", "dims", "has_axis", "offset")

    def __init__(self, slot: int, dims: tuple[int, ...], has_axis: bool,
                 offset: int | None = None):
        self.slot = slot
        self.dims = dims
        self.has_axis = has_axis
        self.offset = offset  # flat element offset inside the parent, or None

    def dynamic_axis(self, ctx: ExprContext) -> bool:
        return ctx.has_axis[self.slot]

    def eval(self, ctx: ExprContext):
        value = ctx.values[self.slot]
        if self.offset is None:
            return value
        if ctx.has_axis[self.slot]:
            return value[:, self.offset] if value.ndim > 1 else value
        if np.ndim(value) == 0:
            return value
        return value[self.offset]


def _align(value, has_axis: bool, own_size: int, out_size: int):
    """Insert the middle singleton so (N,) scalars broadcast against vectors."""
    if has_axis and own_size == 1 and out_size > 1 and np.ndim(value) == 1:
        return value[:, None]
    return value


class FuncApply(CompiledExpr):
    """Application of a registered deterministic function."""

    __slots__ = ("func", "args", "dims", "has_axis")

    def __init__(self, func: DeterministicFunction, args: list[CompiledExpr],
                 dims: tuple[int, ...], has_axis: bool):
        self.func = func
        self.args = args
        self.dims = dims
        self.has_axis = has_axis

    def dynamic_axis(self, ctx: ExprContext) -> bool:
        return any(a.dynamic_axis(ctx) for a in self.args)

    def eval(self, ctx: ExprContext):
        values = [a.eval(ctx) for a in self.args]
        dyn = [a.dynamic_axis(ctx) for a in self.args]
        if self.func.reduces:
            return self._apply_reduce(values[0], dyn[0])
        if self.func.vectorized:
            out_size = self.size
            aligned = [_align(v, d, a.size, out_size)
                       for v, d, a in zip(values, dyn, self.args)]
            return self.func.eval_fn(*aligned)
        if not any(dyn):
            return self._apply_plain(values)
        return self._apply_per_particle(values, dyn, ctx.n_particles)

    def _apply_reduce(self, value, dyn: bool):
        if dyn:
            v2 = value if np.ndim(value) == 2 else np.asarray(value)[:, None]
            return self.func.eval_fn(v2)
        return self.func.eval_fn(np.atleast_1d(np.asarray(value, dtype=np.float64)))

    def _apply_plain(self, values):
        shaped = [np.asarray(v, dtype=np.float64).reshape(a.dims)
                  for v, a in zip(values, self.args)]
        try:
            out = self.func.eval_fn(*shaped)
        except Exception as exc:  # user callback failure
            raise ExtensionError(f"function '{self.func.name}' failed: {exc}") from exc
        return _check_size(np.asarray(out, dtype=np.float64), self.size,
                           self.func.name)

    def _apply_per_particle(self, values, dyn, n: int):
        out = np.empty((n, self.size), dtype=np.float64)
        for i in range(n):
            row = []
            for v, d, a in zip(values, dyn, self.args):
                vi = v[i] if d else v
                row.append(np.asarray(vi, dtype=np.float64).reshape(a.dims))
            try:
                res = self.func.eval_fn(*row)
            except Exception as exc:
                raise ExtensionError(
                    f"function '{self.func.name}' failed: {exc}") from exc
            out[i] = _check_size(np.asarray(res, dtype=np.float64), self.size,
                                 self.func.name).reshape(-1)
        return out if self.size > 1 else out[:, 0]


class Gather(CompiledExpr):
    """Stack scalar components (possibly from several nodes) into a vector."""

    __slots__ = ("parts", "dims", "has_axis")

    def __init__(self, parts: list[CompiledExpr], dims: tuple[int, ...],
                 has_axis: bool):
        self.parts = parts
        self.dims = dims
        self.has_axis = has_axis

    def dynamic_axis(self, ctx: ExprContext) -> bool:
        return any(p.dynamic_axis(ctx) for p in self.parts)

    def eval(self, ctx: ExprContext):
        values = [p.eval(ctx) for p in self.parts]
        if not self.dynamic_axis(ctx):
            return np.array([float(v) for v in values], dtype=np.float64)
        n = ctx.n_particles
        cols = [np.broadcast_to(np.asarray(v, dtype=np.float64), (n,))
                for v in values]
        return np.stack(cols, axis=-1)


def _check_size(out: np.ndarray, size: int, name: str) -> np.ndarray:
    if out.size != size:
        raise ExtensionError(f"'{name}' returned {out.size} element(s), "
                             f"expected {size}")
    return out


# ---------------------------------------------------------------------------
# Nodes and graph
# ---------------------------------------------------------------------------

@dataclass
class Node:
    id: int
    kind: str
    name: str
    dims: tuple[int, ...] = ()
    parents: list[int] = field(default_factory=list)
    observed: bool = False
    value: np.ndarray | None = None          # constants & observed stochastic
    dist: str | None = None                  # stochastic only
    params: list[CompiledExpr] = field(default_factory=list)
    trunc_lo: CompiledExpr | None = None
    trunc_hi: CompiledExpr | None = None
    expr: CompiledExpr | None = None         # logical only

    @property
    def size(self) -> int:
        return dims_size(self.dims)

    @property
    def is_stochastic(self) -> bool:
        return self.kind == STOCHASTIC

    @property
    def truncated(self) -> bool:
        return self.trunc_lo is not None or self.trunc_hi is not None


@dataclass
class ArrayInfo:
    """Element-level map of a named model array onto graph nodes."""

    name: str
    dims: tuple[int, ...]
    node_ids: np.ndarray   # flat int64, -1 where no relation defines the element
    offsets: np.ndarray    # flat element offset within the owning node
    scalar: bool = False   # declared without indices; display as a bare name

    def flat_index(self, index: tuple[int, ...]) -> int:
        if len(index) != len(self.dims):
            raise KeyError(f"'{self.name}' has {len(self.dims)} dimension(s), "
                           f"index {index} given")
        for i, d in zip(index, self.dims):
            if not (1 <= i <= d):
                raise KeyError(f"index {index} outside extent {self.dims} "
                               f"of '{self.name}'")
        return int(np.ravel_multi_index(tuple(i - 1 for i in index), self.dims))

    def element_name(self, flat: int) -> str:
        if self.scalar:
            return self.name
        idx = tuple(int(i) + 1 for i in np.unravel_index(flat, self.dims))
        return format_element(self.name, idx)


def format_element(name: str, index: tuple[int, ...]) -> str:
    """1-based display name for an array element, e.g. ``pi[1,2]``."""
    if not index:
        return name
    return f"{name}[{','.join(str(i) for i in index)}]"


def parse_element(text: str) -> tuple[str, tuple[int, ...]]:
    """Inverse of :func:`format_element`; bare names return an empty index."""
    text = text.strip()
    if "[" not in text:
        return text, ()
    if not text.endswith("]"):
        raise ValueError(f"malformed element name {text!r}")
    name, _, inside = text[:-1].partition("[")
    try:
        index = tuple(int(part) for part in inside.split(","))
    except ValueError:
        raise ValueError(f"malformed element name {text!r}") from None
    return name, index


class Graph:
    """Compiled model: nodes, child adjacency, and array element maps."""

    def __init__(self, nodes: list[Node], arrays: dict[str, ArrayInfo],
                 registry):
        self.nodes = nodes
        self.arrays = arrays
        self.registry = registry
        self.children: list[list[int]] = [[] for _ in nodes]
        for node in nodes:
            for pid in node.parents:
                self.children[pid].append(node.id)

    def __len__(self) -> int:
        return len(self.nodes)

    def stochastic_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == STOCHASTIC]

    def counts(self) -> dict[str, int]:
        out = {CONSTANT: 0, LOGICAL: 0, STOCHASTIC: 0, "observed": 0}
        for node in self.nodes:
            out[node.kind] += 1
            if node.observed:
                out["observed"] += 1
        return out

    def array_nodes(self, name: str) -> list[int]:
        """Distinct node ids backing the named array, in element order."""
        info = self.arrays[name]
        seen: dict[int, None] = {}
        for nid in info.node_ids:
            if nid >= 0:
                seen.setdefault(int(nid), None)
        return list(seen)

    def resolve_element(self, name: str, index: tuple[int, ...]) -> tuple[int, int]:
        """(node id, flat offset within node) for a 1-based element index."""
        info = self.arrays.get(name)
        if info is None:
            raise KeyError(f"unknown variable '{name}'")
        if not index and info.scalar:
            index = (1,)
        flat = info.flat_index(index)
        nid = int(info.node_ids[flat])
        if nid < 0:
            raise KeyError(f"element {format_element(name, index)} is not "
                           "defined by any relation")
        return nid, int(info.offsets[flat])

    def monitored_elements(self, monitor: str) -> list[tuple[str, int, int]]:
        """Expand a monitor string into (element name, node id, offset) triples.

        A bare array name covers every relation-defined element; an indexed
        name like ``pi[1,1]`` covers that single element.
        """
        name, index = parse_element(monitor)
        info = self.arrays.get(name)
        if info is None:
            raise KeyError(f"unknown monitor '{monitor}'")
        if index:
            nid, off = self.resolve_element(name, index)
            return [(format_element(name, index), nid, off)]
        out = []
        for flat in range(info.node_ids.size):
            nid = int(info.node_ids[flat])
            if nid < 0:
                continue
            out.append((info.element_name(flat), nid, int(info.offsets[flat])))
        if not out:
            raise KeyError(f"monitor '{monitor}' has no defined elements")
        return out
