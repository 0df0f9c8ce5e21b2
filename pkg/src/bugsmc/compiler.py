"""Compile a parsed model plus a data table into a graph of nodes.

Loops are unrolled with integer bounds evaluated from the data; every relation
instantiates one node per left-hand-side element (a multi-element left side
such as ``x[,t]`` makes a single multivariate node). Array extents are inferred
bottom-up from index usage, data dimensions, and distribution/function dim
callbacks, iterating to a fixpoint. Indices must be compile-time constants.

Also provides ancestral forward sampling and standalone logical-node
evaluation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import parser as P
from .data import DataEntry, DataTable
from .distributions import ParamError
from .graph import (CONSTANT, LOGICAL, STOCHASTIC, ArrayInfo, CompiledExpr,
                    CompileError, ExprContext, FuncApply, Gather, Graph, Node,
                    ParentRef, dims_size, format_element)
from .registry import DistFuncRegistry, default_registry

INTEGER_TOL = 1e-8

_SLICE = object()  # marker for an empty-slice position in an index spec


class _NotConstant(Exception):
    """Internal: expression references a non-constant quantity."""


@dataclass
class _Instance:
    """One unrolled relation."""

    relation: object                      # StochasticRelation | DeterministicRelation
    env: dict[str, int]                   # loop indices in scope
    lhs_spec: tuple                       # per-dim int or _SLICE
    line: int
    column: int
    target_dims: tuple[int, ...] | None = None   # dims of the node value
    node_id: int | None = None

    @property
    def name(self) -> str:
        return self.relation.lhs.name

    @property
    def stochastic(self) -> bool:
        return isinstance(self.relation, P.StochasticRelation)


@dataclass
class _ArrayState:
    rank: int | None = None
    extents: list[int] = field(default_factory=list)
    from_data: bool = False
    scalar_use: bool = False


class _ExprResult:
    """Either a folded constant or a compiled expression part."""

    __slots__ = ("const", "expr", "dims")

    def __init__(self, const=None, expr: CompiledExpr | None = None,
                 dims: tuple[int, ...] = ()):
        self.const = const
        self.expr = expr
        self.dims = dims

    @property
    def is_const(self) -> bool:
        return self.expr is None


class _RelCtx:
    """Parent bookkeeping while compiling one node's expressions."""

    def __init__(self, compiler: "_Compiler"):
        self.compiler = compiler
        self.slots: dict[int, int] = {}

    def slot_of(self, node_id: int) -> int:
        slot = self.slots.get(node_id)
        if slot is None:
            slot = len(self.slots)
            self.slots[node_id] = slot
        return slot

    def parent_ref(self, node_id: int, offset: int | None,
                   dims: tuple[int, ...]) -> ParentRef:
        node = self.compiler.nodes[node_id]
        return ParentRef(self.slot_of(node_id), dims,
                         node.kind != CONSTANT, offset)

    def const_ref(self, value: np.ndarray, dims: tuple[int, ...]) -> ParentRef:
        nid = self.compiler.constant_node(value, dims)
        return ParentRef(self.slot_of(nid), dims, False, None)

    def parents(self) -> list[int]:
        return list(self.slots)


class _Compiler:
    def __init__(self, ast: P.ModelAST, data: DataTable,
                 registry: DistFuncRegistry):
        self.ast = ast
        self.data = data
        self.registry = registry
        self.instances: list[_Instance] = []
        self.arrays: dict[str, _ArrayState] = {}
        self.nodes: list[Node] = []
        self.element_nodes: dict[str, np.ndarray] = {}
        self.element_offsets: dict[str, np.ndarray] = {}
        self.const_pool: dict[bytes, int] = {}
        self.lhs_names: set[str] = set()
        self._collect_lhs_names(ast.statements)

    # -- setup ---------------------------------------------------------------

    def _collect_lhs_names(self, statements) -> None:
        for stmt in statements:
            if isinstance(stmt, P.ForLoop):
                self._collect_lhs_names(stmt.body)
            else:
                self.lhs_names.add(stmt.lhs.name)

    def _array_state(self, name: str) -> _ArrayState:
        state = self.arrays.get(name)
        if state is None:
            state = _ArrayState()
            if name in self.data:
                state.from_data = True
                state.rank = len(self.data[name].dims)
                state.extents = list(self.data[name].dims)
            self.arrays[name] = state
        return state

    # -- constant evaluation ---------------------------------------------------

    def _eval_const(self, expr, env: dict[str, int]) -> np.ndarray:
        """Evaluate an expression that may only reference data and loop indices."""
        if isinstance(expr, P.Constant):
            return np.float64(expr.value)
        if isinstance(expr, P.VarRef):
            if not expr.indices and expr.name in env:
                return np.float64(env[expr.name])
            if expr.name in self.lhs_names:
                raise _NotConstant(expr.name)
            entry = self.data.entries.get(expr.name)
            if entry is None:
                raise _NotConstant(expr.name)
            return self._const_data_ref(expr, entry, env)
        if isinstance(expr, P.UnaryOp):
            return np.negative(self._eval_const(expr.operand, env))
        if isinstance(expr, P.BinaryOp):
            func = self.registry.functions[expr.op]
            return np.asarray(func.eval_fn(self._eval_const(expr.lhs, env),
                                           self._eval_const(expr.rhs, env)),
                              dtype=np.float64)
        if isinstance(expr, P.Apply):
            func = self.registry.functions.get(expr.func)
            if func is None:
                raise CompileError(f"unknown function '{expr.func}'",
                                   expr.line, expr.column)
            args = [self._eval_const(a, env) for a in expr.args]
            return np.asarray(func.eval_fn(*args), dtype=np.float64)
        raise _NotConstant(str(expr))

    def _const_data_ref(self, ref: P.VarRef, entry: DataEntry,
                        env: dict[str, int]) -> np.ndarray:
        if not ref.indices:
            if not entry.fully_observed:
                raise CompileError(f"data entry '{ref.name}' used as a constant "
                                   "has missing values", ref.line, ref.column)
            values = entry.values.reshape(entry.dims)
            return np.float64(values.reshape(-1)[0]) if values.size == 1 else values
        spec = self._eval_index_spec(ref, env)
        flats, sel_dims = self._selection(ref.name, spec, entry.dims,
                                          ref.line, ref.column)
        if not np.all(entry.mask[flats]):
            raise CompileError(f"data entry '{ref.name}' used as a constant "
                               "has missing values", ref.line, ref.column)
        picked = entry.values[flats]
        return np.float64(picked[0]) if not sel_dims else picked

    def _eval_scalar_int(self, expr, env, what: str) -> int:
        try:
            value = self._eval_const(expr, env)
        except _NotConstant as exc:
            raise CompileError(f"{what} must be a constant expression "
                               f"(cannot resolve '{exc}')",
                               getattr(expr, "line", None),
                               getattr(expr, "column", None)) from None
        value = np.asarray(value)
        if value.size != 1:
            raise CompileError(f"{what} must be scalar",
                               getattr(expr, "line", None),
                               getattr(expr, "column", None))
        scalar = float(value.reshape(-1)[0])
        rounded = round(scalar)
        if abs(scalar - rounded) > INTEGER_TOL:
            raise CompileError(f"{what} must be an integer, got {scalar!r}",
                               getattr(expr, "line", None),
                               getattr(expr, "column", None))
        return int(rounded)

    def _eval_index_spec(self, ref: P.VarRef, env) -> tuple:
        spec = []
        for idx in ref.indices:
            if isinstance(idx, P.EmptySlice):
                spec.append(_SLICE)
            elif isinstance(idx, P.RangeIndex):
                lo = self._eval_scalar_int(idx.lo, env, "array index")
                hi = self._eval_scalar_int(idx.hi, env, "array index")
                if lo < 1 or hi < lo:
                    raise CompileError(f"bad index range {lo}:{hi}",
                                       ref.line, ref.column)
                spec.append((lo, hi))
            else:
                i = self._eval_scalar_int(idx, env, "array index")
                if i < 1:
                    raise CompileError(f"array index must be >= 1, got {i}",
                                       ref.line, ref.column)
                spec.append(i)
        return tuple(spec)

    def _selection(self, name: str, spec: tuple, dims: tuple[int, ...],
                   line, column) -> tuple[np.ndarray, tuple[int, ...]]:
        """Flat element indices (row-major over the selection) and their dims."""
        if len(spec) != len(dims):
            raise CompileError(f"'{name}' has {len(dims)} dimension(s), "
                               f"{len(spec)} index position(s) given", line, column)
        per_dim = []
        sel_dims = []
        for s, d in zip(spec, dims):
            if s is _SLICE:
                per_dim.append(range(d))
                sel_dims.append(d)
            elif isinstance(s, tuple):
                lo, hi = s
                if hi > d:
                    raise CompileError(f"index {hi} outside extent {d} of '{name}'",
                                       line, column)
                per_dim.append(range(lo - 1, hi))
                sel_dims.append(hi - lo + 1)
            else:
                if s > d:
                    raise CompileError(f"index {s} outside extent {d} of '{name}'",
                                       line, column)
                per_dim.append((s - 1,))
        flats = [int(np.ravel_multi_index(combo, dims))
                 for combo in itertools.product(*per_dim)]
        return np.asarray(flats, dtype=np.int64), tuple(sel_dims)

    # -- pass 1: unrolling ------------------------------------------------------

    def unroll(self) -> None:
        self._unroll_statements(self.ast.statements, {})

    def _unroll_statements(self, statements, env: dict[str, int]) -> None:
        for stmt in statements:
            if isinstance(stmt, P.ForLoop):
                self._unroll_loop(stmt, env)
            else:
                spec = self._eval_index_spec(stmt.lhs, env)
                self.instances.append(_Instance(stmt, dict(env), spec,
                                                stmt.line, stmt.column))

    def _unroll_loop(self, loop: P.ForLoop, env: dict[str, int]) -> None:
        if loop.index in env:
            raise CompileError(f"loop index '{loop.index}' shadows an enclosing "
                               "loop index", loop.line, loop.column)
        if loop.index in self.lhs_names or loop.index in self.data:
            raise CompileError(f"loop index '{loop.index}' shadows a "
                               "data/variable name", loop.line, loop.column)
        lo = self._eval_scalar_int(loop.lo, env, "loop bound")
        hi = self._eval_scalar_int(loop.hi, env, "loop bound")
        for value in range(lo, hi + 1):  # empty when hi < lo
            inner = dict(env)
            inner[loop.index] = value
            self._unroll_statements(loop.body, inner)

    # -- pass 2: extent inference ------------------------------------------

    def infer_extents(self) -> None:
        for inst in self.instances:
            self._account_ref_extents(inst.relation.lhs, inst.lhs_spec,
                                      lhs=True)
            for expr in self._relation_expressions(inst.relation):
                self._account_expr_extents(expr, inst.env)
        # fixpoint: left-hand sides whose slice extents come from dim callbacks
        pending = [inst for inst in self.instances
                   if any(s is _SLICE for s in inst.lhs_spec)]
        for inst in self.instances:
            if inst not in pending:
                inst.target_dims = ()
        progress = True
        while pending and progress:
            progress = False
            still = []
            for inst in pending:
                dims = self._try_target_dims(inst)
                if dims is None:
                    still.append(inst)
                    continue
                self._assign_slice_extents(inst, dims)
                progress = True
            pending = still
        if pending:
            inst = pending[0]
            raise CompileError(f"cannot infer extents for '{inst.name}'",
                               inst.line, inst.column)

    def _relation_expressions(self, relation):
        if isinstance(relation, P.StochasticRelation):
            yield from relation.params
            if relation.truncation is not None:
                if relation.truncation.lower is not None:
                    yield relation.truncation.lower
                if relation.truncation.upper is not None:
                    yield relation.truncation.upper
        else:
            yield relation.rhs

    def _account_expr_extents(self, expr, env) -> None:
        if isinstance(expr, P.Constant):
            return
        if isinstance(expr, P.VarRef):
            if not expr.indices and expr.name in env:
                return
            spec = self._eval_index_spec(expr, env)
            self._account_ref_extents(expr, spec, lhs=False)
            return
        if isinstance(expr, P.UnaryOp):
            self._account_expr_extents(expr.operand, env)
            return
        if isinstance(expr, P.BinaryOp):
            self._account_expr_extents(expr.lhs, env)
            self._account_expr_extents(expr.rhs, env)
            return
        if isinstance(expr, P.Apply):
            for arg in expr.args:
                self._account_expr_extents(arg, env)

    def _unify_rank(self, name, state: _ArrayState, rank: int, line, column):
        if state.rank is None:
            state.rank = rank
            state.extents = state.extents + [0] * (rank - len(state.extents))
        elif state.rank != rank:
            raise CompileError(f"'{name}' used with {rank} index position(s) "
                               f"but has {state.rank} dimension(s)", line, column)

    def _grow(self, state: _ArrayState, needed: tuple[int, ...]) -> None:
        for i, n in enumerate(needed):
            if n > state.extents[i]:
                state.extents[i] = n

    def _account_ref_extents(self, ref: P.VarRef, spec: tuple, lhs: bool) -> None:
        name = ref.name
        state = self._array_state(name)
        if not spec:
            if state.from_data:
                if lhs or name in self.lhs_names:
                    # bare use of a model variable: must be a scalar entry
                    if int(np.prod(state.extents)) != 1:
                        raise CompileError(
                            f"'{name}' is used without indices but data gives "
                            f"extent {tuple(state.extents)}",
                            ref.line, ref.column)
                    state.scalar_use = True
                return
            state.scalar_use = True
            self._unify_rank(name, state, 1, ref.line, ref.column)
            self._grow(state, (1,))
            return
        self._unify_rank(name, state, len(spec), ref.line, ref.column)
        needed = []
        for s in spec:
            if s is _SLICE:
                needed.append(0)
            elif isinstance(s, tuple):
                needed.append(s[1])
            else:
                needed.append(s)
        if state.from_data:
            for n, d in zip(needed, state.extents):
                if n > d:
                    raise CompileError(
                        f"index {n} outside data extent {tuple(state.extents)} "
                        f"of '{name}'", ref.line, ref.column)
        else:
            self._grow(state, tuple(needed))

    def _expr_dims(self, expr, env) -> tuple[int, ...] | None:
        """Static value dims of an expression; None while extents unresolved."""
        if isinstance(expr, P.Constant):
            return ()
        if isinstance(expr, P.VarRef):
            if not expr.indices:
                if expr.name in env:
                    return ()
                state = self._array_state(expr.name)
                if state.from_data and not state.scalar_use:
                    entry = self.data[expr.name]
                    return () if entry.values.size == 1 else entry.dims
                return ()
            state = self._array_state(expr.name)
            spec = self._eval_index_spec(expr, env)
            sel = []
            for s, pos in zip(spec, range(len(spec))):
                if s is _SLICE:
                    extent = state.extents[pos] if state.rank else 0
                    if extent <= 0:
                        return None
                    sel.append(extent)
                elif isinstance(s, tuple):
                    sel.append(s[1] - s[0] + 1)
            return tuple(sel)
        if isinstance(expr, P.UnaryOp):
            return self._expr_dims(expr.operand, env)
        if isinstance(expr, P.BinaryOp):
            lhs = self._expr_dims(expr.lhs, env)
            rhs = self._expr_dims(expr.rhs, env)
            if lhs is None or rhs is None:
                return None
            return self._func_dims(expr.op, [lhs, rhs], expr.line, expr.column)
        if isinstance(expr, P.Apply):
            arg_dims = [self._expr_dims(a, env) for a in expr.args]
            if any(d is None for d in arg_dims):
                return None
            return self._func_dims(expr.func, arg_dims, expr.line, expr.column)
        raise CompileError(f"unsupported expression {expr!r}")

    def _func_dims(self, name: str, arg_dims, line, column) -> tuple[int, ...]:
        func = self.registry.functions.get(name)
        if func is None:
            raise CompileError(f"unknown function '{name}'", line, column)
        try:
            return func.dim(arg_dims)
        except ValueError as exc:
            raise CompileError(str(exc), line, column) from None

    def _try_target_dims(self, inst: _Instance) -> tuple[int, ...] | None:
        n_slices = sum(1 for s in inst.lhs_spec if s is _SLICE)
        if isinstance(inst.relation, P.StochasticRelation):
            dist = self.registry.distributions.get(inst.relation.dist)
            if dist is None:
                raise CompileError(f"unknown distribution '{inst.relation.dist}'",
                                   inst.line, inst.column)
            param_dims = [self._expr_dims(p, inst.env)
                          for p in inst.relation.params]
            if any(d is None for d in param_dims):
                return None
            try:
                out = dist.dim(param_dims)
            except ValueError as exc:
                raise CompileError(str(exc), inst.line, inst.column) from None
        else:
            out = self._expr_dims(inst.relation.rhs, inst.env)
            if out is None:
                return None
        return self._match_target_dims(out, n_slices, inst)

    def _match_target_dims(self, out_dims: tuple[int, ...], n_slices: int,
                           inst: _Instance) -> tuple[int, ...]:
        squeezed = tuple(d for d in out_dims if d != 1)
        if n_slices == 0:
            if dims_size(out_dims) != 1:
                raise CompileError(
                    f"'{inst.name}' target is scalar but the right-hand side "
                    f"has dims {tuple(out_dims)}", inst.line, inst.column)
            return ()
        if len(out_dims) == n_slices:
            return tuple(out_dims)
        if len(squeezed) == n_slices:
            return squeezed
        raise CompileError(
            f"'{inst.name}' target has {n_slices} open dimension(s) but the "
            f"right-hand side has dims {tuple(out_dims)}", inst.line, inst.column)

    def _assign_slice_extents(self, inst: _Instance, dims: tuple[int, ...]) -> None:
        state = self._array_state(inst.name)
        j = 0
        needed = []
        for s in inst.lhs_spec:
            if s is _SLICE:
                needed.append(dims[j])
                j += 1
            elif isinstance(s, tuple):
                needed.append(s[1])
            else:
                needed.append(s)
        if state.from_data:
            for n, d in zip(needed, state.extents):
                if n > d:
                    raise CompileError(
                        f"'{inst.name}' extent {n} exceeds data extent {d}",
                        inst.line, inst.column)
        else:
            self._grow(state, tuple(needed))
        inst.target_dims = dims

    # -- pass 3: node shells -----------------------------------------------------

    def create_shells(self) -> None:
        for name, state in self.arrays.items():
            if state.rank is None:
                continue
            if any(e <= 0 for e in state.extents):
                raise CompileError(f"cannot infer extents for '{name}'")
            size = dims_size(tuple(state.extents))
            self.element_nodes[name] = np.full(size, -1, dtype=np.int64)
            self.element_offsets[name] = np.zeros(size, dtype=np.int64)
        for inst in self.instances:
            self._create_shell(inst)

    def _lhs_elements(self, inst: _Instance) -> np.ndarray:
        state = self.arrays[inst.name]
        dims = tuple(state.extents)
        spec = inst.lhs_spec if inst.lhs_spec else (1,)
        flats, _ = self._selection(inst.name, spec, dims, inst.line, inst.column)
        return flats

    def _create_shell(self, inst: _Instance) -> None:
        name = inst.name
        flats = self._lhs_elements(inst)
        node_map = self.element_nodes[name]
        taken = node_map[flats] >= 0
        if np.any(taken):
            state = self.arrays[name]
            flat = int(flats[np.argmax(taken)])
            idx = tuple(int(i) + 1 for i in
                        np.unravel_index(flat, tuple(state.extents)))
            raise CompileError(f"element {format_element(name, idx)} "
                               "defined twice", inst.line, inst.column)
        nid = len(self.nodes)
        dims = inst.target_dims or ()
        display = self._instance_name(inst)
        entry = self.data.entries.get(name)
        if inst.stochastic:
            observed, value = self._observedness(inst, entry, flats)
            node = Node(nid, STOCHASTIC, display, dims, observed=observed,
                        value=value, dist=inst.relation.dist)
        else:
            if entry is not None and np.any(entry.mask[flats]):
                raise CompileError(
                    f"'{display}' is defined by a deterministic relation but "
                    "also given in data", inst.line, inst.column)
            node = Node(nid, LOGICAL, display, dims)
        self.nodes.append(node)
        inst.node_id = nid
        node_map[flats] = nid
        self.element_offsets[name][flats] = np.arange(len(flats))

    def _observedness(self, inst, entry, flats):
        if entry is None:
            return False, None
        mask = entry.mask[flats]
        if not mask.any():
            return False, None
        if not mask.all():
            if len(flats) > 1:
                raise CompileError(
                    f"'{self._instance_name(inst)}' is only partially observed",
                    inst.line, inst.column)
            return False, None
        picked = entry.values[flats]
        value = np.float64(picked[0]) if len(flats) == 1 else picked.copy()
        return True, value

    def _instance_name(self, inst: _Instance) -> str:
        if not inst.lhs_spec:
            return inst.name
        parts = []
        for s in inst.lhs_spec:
            if s is _SLICE:
                parts.append("")
            elif isinstance(s, tuple):
                parts.append(f"{s[0]}:{s[1]}")
            else:
                parts.append(str(s))
        return f"{inst.name}[{','.join(parts)}]"

    # -- pass 4: expressions -------------------------------------------------------

    def constant_node(self, value, dims: tuple[int, ...]) -> int:
        arr = np.asarray(value, dtype=np.float64)
        flat = arr.reshape(-1)
        key = (tuple(dims), flat.tobytes())
        nid = self.const_pool.get(key)
        if nid is not None:
            return nid
        nid = len(self.nodes)
        stored = np.float64(flat[0]) if dims_size(dims) == 1 else flat.copy()
        label = (f"{stored:g}" if np.ndim(stored) == 0
                 else "[" + ",".join(f"{v:g}" for v in stored) + "]")
        self.nodes.append(Node(nid, CONSTANT, label, dims, value=stored))
        self.const_pool[key] = nid
        return nid

    def compile_expressions(self) -> None:
        for inst in self.instances:
            node = self.nodes[inst.node_id]
            ctx = _RelCtx(self)
            if inst.stochastic:
                rel = inst.relation
                params = [self._as_expr(self._compile_expr(p, inst.env, ctx), ctx)
                          for p in rel.params]
                self._check_param_dims(inst, params)
                node.params = [p.expr for p in params]
                if rel.truncation is not None:
                    node.trunc_lo, node.trunc_hi = self._compile_truncation(
                        rel.truncation, inst, ctx)
            else:
                result = self._compile_expr(inst.relation.rhs, inst.env, ctx)
                want = self._match_target_dims(result.dims,
                                               len(inst.target_dims or ()), inst)
                if tuple(want) != tuple(inst.target_dims or ()):
                    raise CompileError(
                        f"'{inst.name}' dims {inst.target_dims} do not match "
                        f"right-hand side dims {result.dims}",
                        inst.line, inst.column)
                if result.is_const:
                    # fully determined right-hand side: the node is a constant
                    node.kind = CONSTANT
                    node.value = (np.float64(np.asarray(result.const).reshape(-1)[0])
                                  if dims_size(result.dims) == 1
                                  else np.asarray(result.const,
                                                  dtype=np.float64).reshape(-1))
                else:
                    node.expr = result.expr
            node.parents = ctx.parents()

    def _check_param_dims(self, inst: _Instance, params: list[_ExprResult]) -> None:
        dist = self.registry.distributions[inst.relation.dist]
        try:
            out = dist.dim([p.dims for p in params])
        except ValueError as exc:
            raise CompileError(str(exc), inst.line, inst.column) from None
        want = self._match_target_dims(out, len(inst.target_dims or ()), inst)
        if tuple(want) != tuple(inst.target_dims or ()):
            raise CompileError(
                f"'{inst.name}' dims {inst.target_dims} do not match "
                f"distribution output dims {out}", inst.line, inst.column)

    def _compile_truncation(self, trunc: P.Truncation, inst: _Instance,
                            ctx: _RelCtx):
        lo = hi = None
        lo_val = hi_val = None
        if trunc.lower is not None:
            res = self._as_expr(self._compile_expr(trunc.lower, inst.env, ctx), ctx,
                                want_scalar=True, inst=inst)
            lo, lo_val = res.expr, res.const
        if trunc.upper is not None:
            res = self._as_expr(self._compile_expr(trunc.upper, inst.env, ctx), ctx,
                                want_scalar=True, inst=inst)
            hi, hi_val = res.expr, res.const
        if lo_val is not None and hi_val is not None and not lo_val < hi_val:
            raise CompileError(f"truncation bounds must satisfy lower < upper, "
                               f"got ({lo_val:g}, {hi_val:g})",
                               inst.line, inst.column)
        dist = self.registry.distributions[inst.relation.dist]
        if not dist.supports_truncation:
            raise CompileError(f"distribution '{dist.name}' does not support "
                               "truncation", inst.line, inst.column)
        return lo, hi

    def _as_expr(self, result: _ExprResult, ctx: _RelCtx, want_scalar=False,
                 inst=None) -> _ExprResult:
        """Materialize a folded constant as a constant-node reference."""
        if want_scalar and dims_size(result.dims) != 1:
            raise CompileError("truncation bounds must be scalar",
                               inst.line if inst else None,
                               inst.column if inst else None)
        if result.is_const:
            ref = ctx.const_ref(np.asarray(result.const, dtype=np.float64),
                                result.dims)
            out = _ExprResult(const=result.const, expr=ref, dims=result.dims)
            return out
        return result

    def _compile_expr(self, expr, env, ctx: _RelCtx) -> _ExprResult:
        if isinstance(expr, P.Constant):
            return _ExprResult(const=np.float64(expr.value), dims=())
        if isinstance(expr, P.VarRef):
            return self._compile_ref(expr, env, ctx)
        if isinstance(expr, P.UnaryOp):
            return self._compile_apply("neg", [expr.operand], expr, env, ctx)
        if isinstance(expr, P.BinaryOp):
            return self._compile_apply(expr.op, [expr.lhs, expr.rhs], expr,
                                       env, ctx)
        if isinstance(expr, P.Apply):
            return self._compile_apply(expr.func, list(expr.args), expr, env, ctx)
        raise CompileError(f"unsupported expression {expr!r}")

    def _compile_apply(self, fname: str, args, expr, env, ctx) -> _ExprResult:
        func = self.registry.functions.get(fname)
        if func is None:
            raise CompileError(f"unknown function '{fname}'",
                               expr.line, expr.column)
        results = [self._compile_expr(a, env, ctx) for a in args]
        out_dims = self._func_dims(fname, [r.dims for r in results],
                                   expr.line, expr.column)
        if all(r.is_const for r in results):
            shaped = [np.asarray(r.const, dtype=np.float64).reshape(r.dims)
                      for r in results]
            with np.errstate(all="ignore"):
                value = np.asarray(func.eval_fn(*shaped), dtype=np.float64)
            if value.size != dims_size(out_dims):
                raise CompileError(
                    f"'{fname}' returned {value.size} element(s), expected "
                    f"dims {tuple(out_dims)}", expr.line, expr.column)
            return _ExprResult(const=value, dims=out_dims)
        parts = [self._as_expr(r, ctx) for r in results]
        has_axis = any(p.expr.has_axis for p in parts)
        return _ExprResult(expr=FuncApply(func, [p.expr for p in parts],
                                          out_dims, has_axis),
                           dims=out_dims)

    def _compile_ref(self, ref: P.VarRef, env, ctx) -> _ExprResult:
        name = ref.name
        if not ref.indices:
            if name in env:
                return _ExprResult(const=np.float64(env[name]), dims=())
            state = self.arrays.get(name)
            if state is not None and state.from_data and not state.scalar_use \
                    and name not in self.lhs_names:
                entry = self.data[name]
                if not entry.fully_observed:
                    raise CompileError(f"data entry '{name}' used as a constant "
                                       "has missing values", ref.line, ref.column)
                dims = () if entry.values.size == 1 else entry.dims
                value = (np.float64(entry.values[0]) if entry.values.size == 1
                         else entry.values.reshape(entry.dims))
                return _ExprResult(const=value, dims=dims)
            return self._compile_selection(ref, (1,), env, ctx)
        return self._compile_selection(ref, self._eval_index_spec(ref, env),
                                       env, ctx)

    def _compile_selection(self, ref: P.VarRef, spec, env, ctx) -> _ExprResult:
        name = ref.name
        state = self.arrays.get(name)
        if state is None or state.rank is None:
            entry = self.data.entries.get(name)
            if entry is None:
                raise CompileError(f"unresolved name '{name}'",
                                   ref.line, ref.column)
            dims = entry.dims
        else:
            dims = tuple(state.extents)
        flats, sel_dims = self._selection(name, spec, dims, ref.line, ref.column)
        node_map = self.element_nodes.get(name)
        entry = self.data.entries.get(name)

        elements = []  # per selected element: ("node", nid, off) | ("const", value)
        all_const = True
        for flat in flats:
            nid = int(node_map[flat]) if node_map is not None else -1
            if nid >= 0:
                node = self.nodes[nid]
                if node.kind == CONSTANT:
                    off = int(self.element_offsets[name][flat])
                    value = node.value if np.ndim(node.value) == 0 \
                        else node.value[off]
                    elements.append(("const", np.float64(value)))
                else:
                    elements.append(("node", nid,
                                     int(self.element_offsets[name][flat])))
                    all_const = False
            elif entry is not None and entry.mask[flat]:
                elements.append(("const", np.float64(entry.values[flat])))
            else:
                idx = tuple(int(i) + 1 for i in np.unravel_index(flat, dims))
                raise CompileError(
                    f"unresolved name '{format_element(name, idx)}' "
                    "(no relation defines it and no data value is given)",
                    ref.line, ref.column)

        if all_const:
            values = np.array([e[1] for e in elements], dtype=np.float64)
            if not sel_dims:
                return _ExprResult(const=np.float64(values[0]), dims=())
            return _ExprResult(const=values.reshape(sel_dims), dims=sel_dims)

        if len(elements) == 1:
            _, nid, off = elements[0]
            node = self.nodes[nid]
            if node.size == 1:
                return _ExprResult(expr=ctx.parent_ref(nid, None, ()), dims=())
            return _ExprResult(expr=ctx.parent_ref(nid, off, ()), dims=())

        # whole-node fast path: the selection covers exactly one node in order
        node_ids = {e[1] for e in elements if e[0] == "node"}
        if len(node_ids) == 1 and all(e[0] == "node" for e in elements):
            nid = node_ids.pop()
            node = self.nodes[nid]
            offsets = [e[2] for e in elements]
            if node.size == len(elements) and offsets == list(range(node.size)):
                return _ExprResult(expr=ctx.parent_ref(nid, None, sel_dims),
                                   dims=sel_dims)

        parts: list[CompiledExpr] = []
        for e in elements:
            if e[0] == "const":
                parts.append(ctx.const_ref(e[1], ()))
            else:
                _, nid, off = e
                node = self.nodes[nid]
                parts.append(ctx.parent_ref(nid, None if node.size == 1 else off,
                                            ()))
        has_axis = any(p.has_axis for p in parts)
        return _ExprResult(expr=Gather(parts, sel_dims, has_axis), dims=sel_dims)

    # -- pass 5: finalize -----------------------------------------------------------

    def finalize(self) -> Graph:
        arrays = {}
        for name, node_map in self.element_nodes.items():
            state = self.arrays[name]
            arrays[name] = ArrayInfo(name, tuple(state.extents), node_map,
                                     self.element_offsets[name],
                                     scalar=state.scalar_use and
                                     tuple(state.extents) == (1,))
        graph = Graph(self.nodes, arrays, self.registry)
        self._check_samplers_and_densities(graph)
        self._check_acyclic(graph)
        return graph

    def _check_samplers_and_densities(self, graph: Graph) -> None:
        for node in graph.nodes:
            if node.kind != STOCHASTIC:
                continue
            dist = self.registry.distributions[node.dist]
            if node.observed and not dist.has_density:
                raise CompileError(
                    f"'{node.name}' is observed but distribution "
                    f"'{node.dist}' has no density")
            if not node.observed and not dist.has_sampler:
                raise CompileError(
                    f"'{node.name}' is unobserved but distribution "
                    f"'{node.dist}' has no sampler")

    def _check_acyclic(self, graph: Graph) -> None:
        indegree = [len(n.parents) for n in graph.nodes]
        ready = [i for i, d in enumerate(indegree) if d == 0]
        seen = 0
        while ready:
            nid = ready.pop()
            seen += 1
            for child in graph.children[nid]:
                indegree[child] -= 1
                if indegree[child] == 0:
                    ready.append(child)
        if seen != len(graph.nodes):
            stuck = [n.name for n in graph.nodes if indegree[n.id] > 0]
            raise CompileError("cyclic definition involving: "
                               + ", ".join(stuck[:5]))


def compile_model(ast: P.ModelAST, data: DataTable,
                  registry: DistFuncRegistry | None = None) -> Graph:
    """Unroll, instantiate, and wire a validated model into a Graph.

    The registry freezes when compilation begins. Raises
    :class:`~bugsmc.graph.CompileError` on unresolved names, dimension
    mismatches, cyclic or duplicate definitions, and non-integer loop bounds.
    """
    registry = registry if registry is not None else default_registry()
    registry.freeze()
    compiler = _Compiler(ast, data, registry)
    compiler.unroll()
    compiler.infer_extents()
    compiler.create_shells()
    compiler.compile_expressions()
    graph = compiler.finalize()
    graph.data = data
    return graph


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------

def evaluate_logical(graph: Graph, node_id: int, parent_values):
    """Evaluate one logical node given plain parent values.

    Pure. Values must match the parents' declared dims; numeric-domain
    violations surface as NaN/-inf in the result rather than raising.
    """
    node = graph.nodes[node_id]
    if node.kind != LOGICAL:
        raise ValueError(f"node {node.name!r} is not logical")
    values = [np.asarray(v, dtype=np.float64).reshape(-1) if np.ndim(v) > 0
              else np.float64(v) for v in parent_values]
    values = [v if np.ndim(v) == 0 or v.size > 1 else np.float64(v[0])
              for v in values]
    ctx = ExprContext(values, [False] * len(values), None)
    with np.errstate(all="ignore"):
        out = node.expr.eval(ctx)
    out = np.asarray(out, dtype=np.float64)
    return float(out.reshape(-1)[0]) if node.size == 1 else out.reshape(node.dims)


def node_parent_values(graph: Graph, values: dict[int, np.ndarray],
                       node: Node) -> list:
    out = []
    for pid in node.parents:
        parent = graph.nodes[pid]
        out.append(parent.value if parent.kind == CONSTANT else values[pid])
    return out


def forward_sample_data(graph: Graph, target_names: list[str],
                        seed=0) -> DataTable:
    """Ancestral sampling of targets and everything they depend on.

    Observed values are kept, never resampled. Returns a new table merging
    the compile-time data with sampled values for every stochastic array
    element visited by the walk. Bit-reproducible for a fixed seed.
    """
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)
    needed: set[int] = set()
    stack: list[int] = []
    for name in target_names:
        if name not in graph.arrays:
            raise KeyError(f"unknown target '{name}'")
        stack.extend(graph.array_nodes(name))
    while stack:
        nid = stack.pop()
        if nid in needed:
            continue
        needed.add(nid)
        stack.extend(graph.nodes[nid].parents)

    # ids ascend in declaration order, but parents can still follow children
    # through forward references; do a proper topological pass
    order = _topo_subset(graph, needed)

    values: dict[int, np.ndarray] = {}
    for nid in order:
        node = graph.nodes[nid]
        if node.kind == CONSTANT:
            values[nid] = node.value
            continue
        pvals = node_parent_values(graph, values, node)
        ctx = ExprContext(pvals, [False] * len(pvals), None)
        if node.kind == LOGICAL:
            with np.errstate(all="ignore"):
                values[nid] = np.asarray(node.expr.eval(ctx), dtype=np.float64)
            continue
        if node.observed:
            values[nid] = node.value
            continue
        values[nid] = _sample_node(graph, node, ctx, rng)

    base = getattr(graph, "data", None)
    return graph_values_to_table(graph, values, needed, base=base)


def _topo_subset(graph: Graph, needed: set[int]) -> list[int]:
    indegree = {nid: sum(1 for p in graph.nodes[nid].parents if p in needed)
                for nid in needed}
    import heapq
    ready = [nid for nid, d in indegree.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for child in graph.children[nid]:
            if child in needed:
                indegree[child] -= 1
                if indegree[child] == 0:
                    heapq.heappush(ready, child)
    return order


def _sample_node(graph: Graph, node: Node, ctx: ExprContext,
                 rng: np.random.Generator):
    dist = graph.registry.distributions[node.dist]
    with np.errstate(all="ignore"):
        params = [np.asarray(p.eval(ctx), dtype=np.float64).reshape(p.dims)
                  for p in node.params]
    try:
        dist.check_params(params)
    except ParamError as exc:
        raise ParamError(f"{node.name}: {exc}") from None
    if node.truncated:
        lo = None if node.trunc_lo is None else float(node.trunc_lo.eval(ctx))
        hi = None if node.trunc_hi is None else float(node.trunc_hi.eval(ctx))
        draw = dist.sample_truncated(params, lo, hi, rng)
    else:
        draw = dist.sample(params, rng)
    arr = np.asarray(draw, dtype=np.float64).reshape(-1)
    if arr.size != node.size:
        from .registry import ExtensionError
        raise ExtensionError(f"sampler for '{node.dist}' returned {arr.size} "
                             f"element(s), expected {node.size} at {node.name}")
    return np.float64(arr[0]) if node.size == 1 else arr


def graph_values_to_table(graph: Graph, values: dict[int, np.ndarray],
                          include: set[int], base: DataTable | None) -> DataTable:
    """Scatter stochastic node values back into named arrays."""
    table = base.copy() if base is not None else DataTable()
    for name, info in graph.arrays.items():
        hit = False
        size = info.node_ids.size
        if name in table:
            entry = table[name]
            vals, mask = entry.values.copy(), entry.mask.copy()
        else:
            vals = np.zeros(size, dtype=np.float64)
            mask = np.zeros(size, dtype=bool)
        for flat in range(size):
            nid = int(info.node_ids[flat])
            if nid < 0 or nid not in include:
                continue
            node = graph.nodes[nid]
            if node.kind != STOCHASTIC or nid not in values:
                continue
            value = values[nid]
            vals[flat] = float(value) if np.ndim(value) == 0 \
                else float(value[int(info.offsets[flat])])
            mask[flat] = True
            hit = True
        if hit:
            table.entries[name] = DataEntry(info.dims, vals, mask)
    return table
