"""Sequential Monte Carlo over an arranged graph.

One run walks the arrangement step by step: every particle's latent group is
extended by sampling each unobserved node from its prior conditional (the
default proposal), the observed group contributes the incremental
log-weight, weights are normalized, and the cloud is resampled whenever the
effective sample size drops below ``threshold * N`` (never after the final
step). With the prior proposal the prior and proposal terms cancel exactly,
so the incremental log-weight is the sum of the observed-group
log-densities, bitwise.

All weight arithmetic is in log space. Particle value arrays are reindexed at
each resampling, so at any time the stored arrays hold lineage-consistent
paths; the final-step arrays therefore provide the smoothing cloud directly,
while filtering clouds are copied out at the step where each monitored node
was sampled. Ancestor indices are recorded per step for genealogy queries and
the smoothing effective sample size.

Everything is vectorized across particles with a leading particle axis;
custom (non-vectorized) samplers fall back to a per-particle loop. A run is
fully deterministic given (graph, arrangement, N, resampling kind, threshold,
seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import ParamError
from .graph import CONSTANT, LOGICAL, STOCHASTIC, ExprContext, Graph, Node
from .ordering import Arrangement
from .resampling import KINDS, resample

__all__ = ["run_smc", "ess", "sess", "diagnose", "posterior_expectation",
           "ParticleCloud", "Genealogy", "SmcOutput", "ProposalPolicy",
           "DiagnosisReport", "DegenerateWeightsError", "SESS_RULE_OF_THUMB"]

SESS_RULE_OF_THUMB = 30.0


class DegenerateWeightsError(Exception):
    """Every particle got zero weight at some step."""

    def __init__(self, step: int, node_names: list[str]):
        names = ", ".join(node_names) if node_names else "(unknown)"
        super().__init__(f"all particle weights vanished at step {step} "
                         f"(observed nodes: {names})")
        self.step = step
        self.node_names = node_names


@dataclass(frozen=True)
class ProposalPolicy:
    """Mutation proposal choice; only the prior conditional is implemented.

    The field is a hook for conditional proposals; adding a policy means
    supplying both a sampler and the matching density correction in the
    weights.
    """

    kind: str = "prior"


def ess(weights: np.ndarray) -> float:
    """Effective sample size 1 / sum(W_i^2) of normalized weights."""
    w = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(w * w))


class Genealogy:
    """Per-step ancestor indices supporting ancestor queries.

    ``transitions[k]`` maps every particle of step k+2 to the index of its
    parent at step k+1 (identity where no resampling happened), so the list
    holds n-1 vectors for an n-step run. Steps are numbered 1..n in queries;
    particle indices are 0-based.
    """

    def __init__(self, transitions: list[np.ndarray], n_particles: int,
                 n_steps: int | None = None):
        self.transitions = transitions
        self.n_particles = n_particles
        self.n_steps = len(transitions) + 1 if n_steps is None else n_steps

    def anc(self, i: int, t: int, generations: int) -> int:
        """Index of the g-th generation ancestor of particle ``i`` at step t."""
        if not (1 <= t <= self.n_steps):
            raise IndexError(f"step {t} outside 1..{self.n_steps}")
        if generations < 0 or generations > t - 1:
            raise IndexError(f"no {generations}-generation ancestor at step {t}")
        idx = i
        for s in range(t, t - generations, -1):
            idx = int(self.transitions[s - 2][idx])
        return idx

    def child(self, i: int, t: int) -> list[int]:
        """Indices at step t+1 whose parent at step t is ``i``."""
        if t >= self.n_steps:
            return []
        vec = self.transitions[t - 1]  # maps step t+1 -> step t
        return [int(j) for j in np.nonzero(vec == i)[0]]

    def ancestors_at(self, t: int) -> np.ndarray:
        """Step-t ancestor index of every final-step particle."""
        if not (1 <= t <= self.n_steps):
            raise IndexError(f"step {t} outside 1..{self.n_steps}")
        idx = np.arange(self.n_particles)
        for s in range(self.n_steps, t, -1):
            idx = self.transitions[s - 2][idx]
        return idx

    def unique_ancestors(self, t: int) -> np.ndarray:
        """The set a(n, t) of distinct step-t ancestors of the final cloud."""
        return np.unique(self.ancestors_at(t))


def sess(genealogy: Genealogy, final_weights: np.ndarray, n: int, t: int) -> float:
    """Smoothing effective sample size of step ``t`` under final weights.

    Final-step weight mass is pooled over shared step-t ancestors; the
    inverse sum of squared pooled masses measures how many distinct
    trajectories effectively support the smoothing approximation at t.
    """
    if n != genealogy.n_steps:
        raise ValueError(f"genealogy has {genealogy.n_steps} steps, n={n} given")
    if not (1 <= t <= n):
        raise ValueError(f"step {t} outside 1..{n}")
    anc = genealogy.ancestors_at(t)
    w = np.asarray(final_weights, dtype=np.float64)
    pooled = np.bincount(anc, weights=w, minlength=genealogy.n_particles)
    return float(1.0 / np.sum(pooled * pooled))


@dataclass
class ParticleCloud:
    """Weighted particle snapshot at one step.

    ``values`` holds one (N,) array per monitored element captured at this
    step, before any resampling. ``ancestors`` maps this cloud's particles to
    the previous step's indices (identity at step 1); ``resampled`` records
    whether a resampling pass closed this step.
    """

    step: int
    values: dict[str, np.ndarray]
    log_weights: np.ndarray
    weights: np.ndarray
    ancestors: np.ndarray
    resampled: bool
    log_incremental: np.ndarray | None = None   # this step's raw log-weight


@dataclass
class SmoothingCloud:
    weights: np.ndarray
    values: dict[str, np.ndarray]


@dataclass
class SmcOutput:
    """Filtering/smoothing particle approximations plus run diagnostics."""

    n_steps: int
    n_particles: int
    log_marg_like: float
    ess: np.ndarray                      # per step
    sess: np.ndarray                     # per step, under final weights
    filtering: dict[str, list[ParticleCloud]]
    smoothing: dict[str, SmoothingCloud]
    genealogy: Genealogy
    settings: dict = field(default_factory=dict)

    def filtering_cloud(self, element: str) -> tuple[np.ndarray, np.ndarray]:
        """(values, weights) of one element at its sampling step."""
        var = element.split("[")[0]
        for cloud in self.filtering.get(var, []):
            if element in cloud.values:
                return cloud.values[element], cloud.weights
        raise KeyError(f"no filtering cloud holds '{element}'")

    def smoothing_cloud(self, element: str) -> tuple[np.ndarray, np.ndarray]:
        var = element.split("[")[0]
        cloud = self.smoothing.get(var)
        if cloud is None or element not in cloud.values:
            raise KeyError(f"no smoothing cloud holds '{element}'")
        return cloud.values[element], cloud.weights

    def to_dict(self) -> dict:
        variables = {}
        for var, clouds in self.filtering.items():
            variables[var] = {
                "filtering": [
                    {"step": c.step,
                     "resampled": c.resampled,
                     "values": {k: v.tolist() for k, v in c.values.items()},
                     "weights": c.weights.tolist()}
                    for c in clouds],
                "smoothing": {
                    "weights": self.smoothing[var].weights.tolist(),
                    "values": {k: v.tolist()
                               for k, v in self.smoothing[var].values.items()}},
            }
        return {"n_steps": self.n_steps,
                "n_particles": self.n_particles,
                "log_marg_like": self.log_marg_like,
                "ess": self.ess.tolist(),
                "sess": self.sess.tolist(),
                "settings": self.settings,
                "variables": variables}

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


@dataclass
class DiagnosisReport:
    min_sess: float
    step: int
    threshold: float
    passed: bool
    recommendation: str

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: min SESS = {self.min_sess:.1f} at step {self.step} "
                f"(threshold {self.threshold:g}). {self.recommendation}")


def diagnose(output: SmcOutput, min_sess: float = SESS_RULE_OF_THUMB) -> DiagnosisReport:
    """Check the smoothing effective sample size against a floor."""
    values = np.asarray(output.sess)
    worst = int(np.argmin(values))
    passed = bool(values[worst] >= min_sess)
    if passed:
        text = "Smoothing degeneracy is acceptable."
    else:
        text = ("Smoothing degeneracy detected: increase the number of "
                "particles and rerun.")
    return DiagnosisReport(float(values[worst]), worst + 1, min_sess, passed, text)


def posterior_expectation(values: np.ndarray, weights: np.ndarray, h=None):
    """Weighted average of ``h`` over particle values (h defaults to identity)."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    hv = values if h is None else np.asarray(h(values), dtype=np.float64)
    return np.sum(weights * hv, axis=-1)


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

class _Engine:
    def __init__(self, graph: Graph, arrangement: Arrangement, monitors,
                 n_particles: int, resampling: str, threshold: float,
                 rng: np.random.Generator, conditioned: dict[int, np.ndarray]):
        self.graph = graph
        self.arrangement = arrangement
        self.n = n_particles
        self.resampling = resampling
        self.threshold = threshold
        self.rng = rng
        self.conditioned = conditioned
        self.values: dict[int, np.ndarray] = {}
        self.axis: dict[int, bool] = {}
        # monitor bookkeeping: node id -> [(variable, element name, offset)]
        self.node_monitors: dict[int, list[tuple[str, str, int]]] = {}
        self.variables: list[str] = []
        for monitor in monitors:
            var = monitor.split("[")[0]
            if var not in self.variables:
                self.variables.append(var)
            for element, nid, off in graph.monitored_elements(monitor):
                self.node_monitors.setdefault(nid, []).append((var, element, off))

    # -- helpers -----------------------------------------------------------

    def _context(self, node: Node) -> ExprContext:
        values, flags = [], []
        nodes = self.graph.nodes
        for pid in node.parents:
            parent = nodes[pid]
            if parent.kind == CONSTANT:
                values.append(parent.value)
                flags.append(False)
            else:
                values.append(self.values[pid])
                flags.append(self.axis[pid])
        return ExprContext(values, flags, self.n)

    def _eval_params(self, node: Node, ctx: ExprContext):
        with np.errstate(all="ignore"):
            return [p.eval(ctx) for p in node.params]

    def _eval_bounds(self, node: Node, ctx: ExprContext):
        with np.errstate(all="ignore"):
            lo = None if node.trunc_lo is None else node.trunc_lo.eval(ctx)
            hi = None if node.trunc_hi is None else node.trunc_hi.eval(ctx)
        return lo, hi

    def _sample_latent(self, node: Node) -> None:
        ctx = self._context(node)
        dist = self.graph.registry.distributions[node.dist]
        params = self._eval_params(node, ctx)
        if dist.vectorized:
            try:
                dist.check_params(params)
            except ParamError as exc:
                raise ParamError(f"{node.name}: {exc}") from None
            if node.truncated:
                lo, hi = self._eval_bounds(node, ctx)
                draw = dist.sample_truncated(params, lo, hi, self.rng, size=self.n)
            else:
                draw = dist.sample(params, self.rng, size=self.n)
            value = np.broadcast_to(np.asarray(draw, dtype=np.float64),
                                    (self.n,)).copy() if np.ndim(draw) == 0 \
                else np.asarray(draw, dtype=np.float64)
        else:
            value = self._sample_custom(node, dist, params, ctx)
        self.values[node.id] = value
        self.axis[node.id] = True

    def _sample_custom(self, node: Node, dist, params, ctx: ExprContext):
        dyn = [p.dynamic_axis(ctx) for p in node.params]
        out = np.empty((self.n, node.size), dtype=np.float64)
        for i in range(self.n):
            row = []
            for p, value, d in zip(node.params, params, dyn):
                vi = value[i] if d else value
                row.append(np.asarray(vi, dtype=np.float64).reshape(p.dims))
            draw = np.asarray(dist.sample(row, self.rng),
                              dtype=np.float64).reshape(-1)
            if draw.size != node.size:
                from .registry import ExtensionError
                raise ExtensionError(
                    f"sampler for '{node.dist}' returned {draw.size} "
                    f"element(s), expected {node.size} at {node.name}")
            out[i] = draw
        return out[:, 0] if node.size == 1 else out

    def _observed_term(self, node: Node):
        ctx = self._context(node)
        dist = self.graph.registry.distributions[node.dist]
        params = self._eval_params(node, ctx)
        if dist.vectorized:
            try:
                dist.check_params(params)
            except ParamError as exc:
                raise ParamError(f"{node.name}: {exc}") from None
            with np.errstate(all="ignore"):
                if node.truncated:
                    lo, hi = self._eval_bounds(node, ctx)
                    term = dist.log_density_truncated(node.value, params, lo, hi)
                else:
                    term = dist.log_density(node.value, params)
            if node.size > 1 and np.ndim(term) > 0:
                term = np.sum(term, axis=-1)
        else:
            term = self._observed_term_custom(node, dist, params, ctx)
        return np.where(np.isnan(term), -np.inf, term)

    def _observed_term_custom(self, node: Node, dist, params, ctx: ExprContext):
        dyn = [p.dynamic_axis(ctx) for p in node.params]
        if not any(dyn):
            row = [np.asarray(v, dtype=np.float64).reshape(p.dims)
                   for p, v in zip(node.params, params)]
            return np.float64(dist.log_density(
                np.asarray(node.value).reshape(node.dims), row))
        out = np.empty(self.n, dtype=np.float64)
        value = np.asarray(node.value).reshape(node.dims)
        for i in range(self.n):
            row = []
            for p, v, d in zip(node.params, params, dyn):
                vi = v[i] if d else v
                row.append(np.asarray(vi, dtype=np.float64).reshape(p.dims))
            out[i] = dist.log_density(value, row)
        return out

    def _capture(self, nid: int) -> dict[str, np.ndarray]:
        """(element name -> (N,) copy) for every monitored element of a node."""
        node = self.graph.nodes[nid]
        out = {}
        for _, element, off in self.node_monitors.get(nid, []):
            value = node.value if node.kind == CONSTANT or node.observed \
                else self.values[nid]
            if self.axis.get(nid, False):
                col = value if node.size == 1 else value[:, off]
                out[element] = np.array(col, dtype=np.float64)
            else:
                scalar = float(value) if np.ndim(value) == 0 else float(value[off])
                out[element] = np.full(self.n, scalar, dtype=np.float64)
        return out

    # -- main loop -----------------------------------------------------------

    def run(self, settings: dict) -> SmcOutput:
        n_steps = self.arrangement.n
        graph = self.graph
        log_n = math.log(self.n)

        for nid, value in self.conditioned.items():
            self.values[nid] = value
            self.axis[nid] = False

        log_carry = np.full(self.n, -log_n)       # normalized log weights
        log_z = 0.0
        ess_per_step = np.empty(n_steps)
        transitions: list[np.ndarray] = []
        step_clouds: list[ParticleCloud] = []
        identity = np.arange(self.n)

        for t in range(n_steps):
            captured: dict[str, np.ndarray] = {}
            capture_ids: list[int] = []
            w_inc = np.zeros(self.n)
            observed_terms: list[tuple[str, np.ndarray]] = []

            for nid in self.arrangement.segments[t]:
                node = graph.nodes[nid]
                if node.kind == CONSTANT or nid in self.conditioned:
                    continue
                if node.kind == LOGICAL:
                    ctx = self._context(node)
                    with np.errstate(all="ignore"):
                        value = node.expr.eval(ctx)
                    self.axis[nid] = node.expr.dynamic_axis(ctx)
                    self.values[nid] = np.asarray(value, dtype=np.float64) \
                        if self.axis[nid] else value
                elif node.observed:
                    term = self._observed_term(node)
                    observed_terms.append((node.name, term))
                    w_inc = w_inc + term
                else:
                    self._sample_latent(node)
                if nid in self.node_monitors:
                    capture_ids.append(nid)

            # log-marginal-likelihood increment and weight update
            log_unnorm = log_carry + w_inc
            top = np.max(log_unnorm)
            if not np.isfinite(top):
                bad = [name for name, term in observed_terms
                       if not np.any(np.isfinite(term))]
                raise DegenerateWeightsError(t + 1, bad or
                                             [n for n, _ in observed_terms])
            lse = top + math.log(np.sum(np.exp(log_unnorm - top)))
            log_z += lse
            log_w = log_unnorm - lse
            weights = np.exp(log_w)
            weights /= weights.sum()
            ess_t = ess(weights)
            ess_per_step[t] = ess_t

            for nid in capture_ids:
                captured.update(self._capture(nid))

            resampled = False
            if t + 1 < n_steps and ess_t < self.threshold * self.n:
                idx = resample(weights, self.resampling, self.rng)
                for vid, has in self.axis.items():
                    if has:
                        self.values[vid] = self.values[vid][idx]
                log_carry = np.full(self.n, -log_n)
                resampled = True
                transitions.append(idx.astype(np.int64))
            else:
                log_carry = log_w
                if t + 1 < n_steps:
                    transitions.append(identity.copy())

            step_clouds.append(ParticleCloud(
                step=t + 1,
                values=captured,
                log_weights=log_w.copy(),
                weights=weights.copy(),
                ancestors=(transitions[t - 1].copy() if t > 0
                           else identity.copy()),
                resampled=resampled,
                log_incremental=np.broadcast_to(w_inc, (self.n,)).copy()))

        genealogy = Genealogy(list(transitions), self.n, n_steps)
        if n_steps == 0:
            final_weights = np.full(self.n, 1.0 / self.n)
            sess_values = np.empty(0)
        else:
            final_weights = step_clouds[-1].weights
            sess_values = np.array([sess(genealogy, final_weights, n_steps, t + 1)
                                    for t in range(n_steps)])

        filtering: dict[str, list[ParticleCloud]] = {v: [] for v in self.variables}
        for cloud in step_clouds:
            per_var: dict[str, dict[str, np.ndarray]] = {}
            for element, values in cloud.values.items():
                var = element.split("[")[0]
                per_var.setdefault(var, {})[element] = values
            for var, elems in per_var.items():
                filtering[var].append(ParticleCloud(
                    cloud.step, elems, cloud.log_weights, cloud.weights,
                    cloud.ancestors, cloud.resampled, cloud.log_incremental))

        smoothing: dict[str, SmoothingCloud] = {
            var: SmoothingCloud(final_weights.copy(), {})
            for var in self.variables}
        for nid, entries in self.node_monitors.items():
            caps = self._capture(nid)
            for var, element, _ in entries:
                smoothing[var].values[element] = caps[element]

        return SmcOutput(
            n_steps=n_steps,
            n_particles=self.n,
            log_marg_like=float(log_z),
            ess=ess_per_step,
            sess=sess_values,
            filtering=filtering,
            smoothing=smoothing,
            genealogy=genealogy,
            settings=settings)


def run_smc(graph: Graph, arrangement: Arrangement, monitors,
            n_particles: int, resampling: str = "systematic",
            threshold: float = 0.5, seed=0, *,
            conditioned: dict[int, np.ndarray] | None = None,
            proposal: ProposalPolicy | None = None) -> SmcOutput:
    """Run one SMC pass and return weighted clouds plus diagnostics.

    Args:
        graph: compiled model.
        arrangement: output of :func:`bugsmc.ordering.arrange`.
        monitors: variable or element names to record, e.g. ``["x", "pi[1,1]"]``.
        n_particles: cloud size N (>= 1).
        resampling: one of multinomial, residual, stratified, systematic.
        threshold: resample when ESS < threshold * N; 1.0 resamples every
            step, 0.0 never.
        seed: integer seed or a ``numpy.random.Generator`` to draw from.
        conditioned: node id -> value; those nodes are clamped, not sampled,
            and contribute no density terms (used by PMMH and sensitivity).
        proposal: mutation policy; only the prior proposal is available.

    Raises:
        DegenerateWeightsError: all particles hit zero weight at some step.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("threshold must lie in [0, 1]")
    if resampling not in KINDS:
        raise ValueError(f"unknown resampling kind {resampling!r}")
    proposal = proposal or ProposalPolicy()
    if proposal.kind != "prior":
        raise ValueError(f"unsupported proposal policy {proposal.kind!r}")
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)
    settings = {"n_particles": int(n_particles), "resampling": resampling,
                "threshold": float(threshold),
                "seed": (int(seed) if isinstance(seed, (int, np.integer)) else None),
                "proposal": proposal.kind}
    engine = _Engine(graph, arrangement, list(monitors), n_particles,
                     resampling, threshold, rng, dict(conditioned or {}))
    return engine.run(settings)
