"""Particle MCMC: PIMH, PMMH with adaptive random-walk proposal, sensitivity.

PIMH proposes a whole SMC run and accepts with the ratio of
marginal-likelihood estimates; the running estimate starts at zero so the
first proposal is always accepted.

PMMH splits the unknowns into parameters, proposed by a component-wise
Gaussian random walk in transformed (unconstrained) space, and latents,
integrated out by an SMC run conditioned on the proposed parameters. The
acceptance ratio multiplies the marginal-likelihood ratio, the prior ratio on
the original scale, and the proposal-density ratio evaluated on the original
scale; for the symmetric walk the Gaussian kernel terms cancel bitwise and
only the transform Jacobians survive. Proposal scales adapt by
Robbins-Monro toward 0.234 acceptance during update (burn-in) calls and
freeze when sampling starts.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import DataTable
from .graph import CompileError, STOCHASTIC
from .model import Model
from .smc import DegenerateWeightsError, SmcOutput, run_smc

TARGET_ACCEPTANCE = 0.234
ADAPT_DECAY = 0.66


class PmcmcError(Exception):
    pass


# ---------------------------------------------------------------------------
# Transforms between a parameter's support and the real line
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transform:
    """Bijection support -> R with the log-Jacobian of the inverse map."""

    kind: str           # identity | log | upper-log | logit
    a: float = 0.0
    b: float = 0.0

    def forward(self, theta: float) -> float:
        if self.kind == "identity":
            return theta
        if self.kind == "log":
            return math.log(theta - self.a)
        if self.kind == "upper-log":
            return math.log(self.b - theta)
        s = (theta - self.a) / (self.b - self.a)
        return math.log(s) - math.log1p(-s)

    def inverse(self, z: float) -> float:
        if self.kind == "identity":
            return z
        if self.kind == "log":
            return self.a + math.exp(z)
        if self.kind == "upper-log":
            return self.b - math.exp(z)
        s = 1.0 / (1.0 + math.exp(-z))
        return self.a + (self.b - self.a) * s

    def log_jacobian(self, z: float) -> float:
        """log |d theta / d z| at the transformed point z."""
        if self.kind == "identity":
            return 0.0
        if self.kind in ("log", "upper-log"):
            return z
        s = 1.0 / (1.0 + math.exp(-z))
        return math.log(self.b - self.a) + math.log(s) + math.log1p(-s)


def transform_for_support(lo: float, hi: float) -> Transform:
    lo_finite = math.isfinite(lo)
    hi_finite = math.isfinite(hi)
    if lo_finite and hi_finite:
        return Transform("logit", lo, hi)
    if lo_finite:
        return Transform("log", lo)
    if hi_finite:
        return Transform("upper-log", 0.0, hi)
    return Transform("identity")


# ---------------------------------------------------------------------------
# PIMH
# ---------------------------------------------------------------------------

@dataclass
class PimhState:
    """Markov state of a particle independent Metropolis-Hastings chain."""

    model: Model
    monitors: list[str]
    rng: np.random.Generator
    resampling: str = "systematic"
    threshold: float = 0.5
    log_z: float = -math.inf          # running estimate; starts at log(0)
    current: dict[str, float] | None = None
    iteration: int = 0
    accepted: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.iteration if self.iteration else 0.0


def pimh_init(model: Model, monitors, seed=0, resampling: str = "systematic",
              threshold: float = 0.5) -> PimhState:
    """Fresh PIMH state; the first transition is accepted with probability 1."""
    monitors = list(monitors)
    if not monitors:
        raise ValueError("at least one monitored variable is required")
    for monitor in monitors:
        model.graph.monitored_elements(monitor)  # raises on unknown names
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)
    return PimhState(model, monitors, rng, resampling, threshold)


def _select_path(output: SmcOutput, rng: np.random.Generator) -> dict[str, float]:
    """Draw one particle index from the final weights and trace its path."""
    weights = None
    path: dict[str, float] = {}
    for cloud in output.smoothing.values():
        weights = cloud.weights
        break
    if weights is None:
        return path
    ell = int(np.searchsorted(np.cumsum(weights), rng.uniform(), side="right"))
    ell = min(ell, len(weights) - 1)
    for cloud in output.smoothing.values():
        for element, values in cloud.values.items():
            path[element] = float(values[ell])
    return path


def _pimh_step(state: PimhState, n_particles: int) -> bool:
    output = run_smc(state.model.graph, state.model.arrangement, state.monitors,
                     n_particles, resampling=state.resampling,
                     threshold=state.threshold, seed=state.rng)
    log_ratio = output.log_marg_like - state.log_z
    accept = log_ratio >= 0 or math.log(state.rng.uniform()) < log_ratio
    if accept:
        state.current = _select_path(output, state.rng)
        state.log_z = output.log_marg_like
        state.accepted += 1
    state.iteration += 1
    return accept


def pimh_update(state: PimhState, n_iterations: int, n_particles: int) -> PimhState:
    """Burn-in: apply transitions without retaining samples."""
    for k in range(n_iterations):
        try:
            _pimh_step(state, n_particles)
        except DegenerateWeightsError as exc:
            raise PmcmcError(f"SMC failed at PIMH iteration "
                             f"{state.iteration + 1}: {exc}") from exc
    return state


def pimh_samples(state: PimhState, n_iterations: int, n_particles: int,
                 thin: int = 1):
    """Run transitions and retain every thin-th post-transition sample.

    Returns ``(traces, log_z_trace)`` where traces maps element names to
    arrays of retained draws.
    """
    if thin < 1:
        raise ValueError("thin must be >= 1")
    kept: dict[str, list[float]] = {}
    log_z_trace: list[float] = []
    for k in range(1, n_iterations + 1):
        try:
            _pimh_step(state, n_particles)
        except DegenerateWeightsError as exc:
            raise PmcmcError(f"SMC failed at PIMH iteration "
                             f"{state.iteration + 1}: {exc}") from exc
        if k % thin == 0:
            for element, value in (state.current or {}).items():
                kept.setdefault(element, []).append(value)
            log_z_trace.append(state.log_z)
    traces = {element: np.asarray(vals) for element, vals in kept.items()}
    return traces, np.asarray(log_z_trace)


# ---------------------------------------------------------------------------
# PMMH
# ---------------------------------------------------------------------------

@dataclass
class _PmmhParam:
    name: str
    node_id: int
    dist_name: str
    param_values: list[np.ndarray]     # prior parameters (constants)
    trunc: tuple[float | None, float | None]
    transform: Transform


@dataclass
class PmmhState:
    """Markov state of a particle marginal Metropolis-Hastings chain."""

    model: Model
    params: list[_PmmhParam]
    latent_monitors: list[str]
    z: np.ndarray                      # transformed parameter values
    scales: np.ndarray                 # per-component random-walk scales
    rng: np.random.Generator
    resampling: str = "systematic"
    threshold: float = 0.5
    log_z: float = -math.inf
    log_prior: float = 0.0
    current_latent: dict[str, float] = field(default_factory=dict)
    adapting: bool = True
    adapt_iterations: int = 0
    iteration: int = 0
    accepted: int = 0

    @property
    def theta(self) -> dict[str, float]:
        return {p.name: p.transform.inverse(float(z))
                for p, z in zip(self.params, self.z)}

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.iteration if self.iteration else 0.0


def _prior_log_density(param: _PmmhParam, registry, theta: float) -> float:
    dist = registry.distributions[param.dist_name]
    lo, hi = param.trunc
    if lo is not None or hi is not None:
        out = dist.log_density_truncated(theta, param.param_values, lo, hi)
    else:
        out = dist.log_density(theta, param.param_values)
    return float(out)


def pmmh_init(model: Model, param_names, inits=None, latent_names=(),
              seed=0, scale: float = 0.1, resampling: str = "systematic",
              threshold: float = 0.5) -> PmmhState:
    """Prepare a PMMH chain over the named parameters.

    Every parameter must resolve to a scalar unobserved stochastic node whose
    prior has an evaluable density and constant parents. Transforms follow
    the node's support: identity on the real line, log on half-lines,
    logit-affine on bounded intervals. Missing ``inits`` draw from the prior.
    """
    param_names = list(param_names)
    if not param_names:
        raise ValueError("at least one parameter name is required")
    graph = model.graph
    registry = model.registry
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)

    params: list[_PmmhParam] = []
    for name in param_names:
        entries = graph.monitored_elements(name)
        if len(entries) != 1:
            raise ValueError(f"parameter '{name}' must name a single element")
        element, nid, off = entries[0]
        node = graph.nodes[nid]
        if node.kind != STOCHASTIC or node.observed:
            raise ValueError(f"parameter '{name}' is not an unobserved "
                             "stochastic node")
        if node.size != 1:
            raise ValueError(f"parameter '{name}' is part of a multivariate "
                             "node and cannot be updated component-wise")
        dist = registry.distributions[node.dist]
        if not dist.has_density:
            raise ValueError(f"parameter '{name}' uses distribution "
                             f"'{node.dist}' which has no density")
        for pid in node.parents:
            if graph.nodes[pid].kind != "constant":
                raise ValueError(f"parameter '{name}' has a non-constant "
                                 "prior parent; fix its hyperparameters first")
        from .graph import ExprContext
        const_values = [graph.nodes[pid].value for pid in node.parents]
        ctx = ExprContext(const_values, [False] * len(const_values), None)
        with np.errstate(all="ignore"):
            param_values = [np.asarray(p.eval(ctx), dtype=np.float64)
                            for p in node.params]
            t_lo = None if node.trunc_lo is None else float(node.trunc_lo.eval(ctx))
            t_hi = None if node.trunc_hi is None else float(node.trunc_hi.eval(ctx))
        lo, hi = dist.support(param_values)
        lo = float(np.max(lo)) if np.ndim(lo) else float(lo)
        hi = float(np.min(hi)) if np.ndim(hi) else float(hi)
        if t_lo is not None:
            lo = max(lo, t_lo)
        if t_hi is not None:
            hi = min(hi, t_hi)
        params.append(_PmmhParam(element, nid, node.dist, param_values,
                                 (t_lo, t_hi), transform_for_support(lo, hi)))

    if inits is None:
        inits = []
        for param in params:
            dist = registry.distributions[param.dist_name]
            lo, hi = param.trunc
            if lo is not None or hi is not None:
                draw = dist.sample_truncated(param.param_values, lo, hi, rng)
            else:
                draw = dist.sample(param.param_values, rng)
            inits.append(float(np.asarray(draw).reshape(-1)[0]))
    if len(inits) != len(params):
        raise ValueError(f"{len(params)} parameter(s) but {len(inits)} init(s)")

    z = np.empty(len(params))
    log_prior = 0.0
    for i, (param, theta) in enumerate(zip(params, inits)):
        lp = _prior_log_density(param, registry, float(theta))
        if not math.isfinite(lp):
            raise ValueError(f"init {theta!r} for '{param.name}' lies outside "
                             "the prior support")
        log_prior += lp
        z[i] = param.transform.forward(float(theta))

    latent_monitors = list(latent_names)
    for monitor in latent_monitors:
        graph.monitored_elements(monitor)
    return PmmhState(model, params, latent_monitors, z,
                     np.full(len(params), float(scale)), rng,
                     resampling, threshold, log_prior=log_prior)


def _gauss_log_kernel(dz: np.ndarray, scales: np.ndarray) -> float:
    return float(np.sum(-0.5 * (dz / scales) ** 2 - np.log(scales)
                        - 0.5 * math.log(2.0 * math.pi)))


def _pmmh_log_accept(state: PmmhState, z_new: np.ndarray, log_z_new: float,
                     log_prior_new: float) -> float:
    """log of the acceptance ratio; kernel terms cancel bitwise when symmetric."""
    log_nu_reverse = _gauss_log_kernel(state.z - z_new, state.scales)
    log_nu_forward = _gauss_log_kernel(z_new - state.z, state.scales)
    jac_current = sum(p.transform.log_jacobian(float(z))
                      for p, z in zip(state.params, state.z))
    jac_new = sum(p.transform.log_jacobian(float(z))
                  for p, z in zip(state.params, z_new))
    # nu is a density on the original scale: kernel minus the Jacobian of the
    # point it evaluates at
    nu_ratio = (log_nu_reverse - jac_current) - (log_nu_forward - jac_new)
    return (log_z_new - state.log_z) + (log_prior_new - state.log_prior) \
        + nu_ratio


def _pmmh_step(state: PmmhState, n_particles: int) -> bool:
    rng = state.rng
    z_new = state.z + state.scales * rng.standard_normal(len(state.z))
    theta_new = [p.transform.inverse(float(z)) for p, z in
                 zip(state.params, z_new)]
    registry = state.model.registry
    log_prior_new = sum(_prior_log_density(p, registry, t)
                        for p, t in zip(state.params, theta_new))
    conditioned = {p.node_id: np.float64(t)
                   for p, t in zip(state.params, theta_new)}
    try:
        output = run_smc(state.model.graph, state.model.arrangement,
                         state.latent_monitors, n_particles,
                         resampling=state.resampling, threshold=state.threshold,
                         seed=rng, conditioned=conditioned)
        log_z_new = output.log_marg_like
    except DegenerateWeightsError:
        output = None
        log_z_new = -math.inf

    log_accept = _pmmh_log_accept(state, z_new, log_z_new, log_prior_new)
    alpha = 1.0 if log_accept >= 0 else math.exp(log_accept)
    accept = rng.uniform() < alpha if alpha < 1.0 else True
    if accept and output is not None:
        state.z = z_new
        state.log_z = log_z_new
        state.log_prior = log_prior_new
        state.current_latent = _select_path(output, rng)
        state.accepted += 1
    state.iteration += 1
    if state.adapting:
        state.adapt_iterations += 1
        step = state.adapt_iterations ** (-ADAPT_DECAY)
        state.scales = np.exp(np.log(state.scales)
                              + step * (alpha - TARGET_ACCEPTANCE))
        np.clip(state.scales, 1e-6, 1e3, out=state.scales)
    return accept


def pmmh_update(state: PmmhState, n_iterations: int, n_particles: int) -> PmmhState:
    """Adaptation plus burn-in: transitions with proposal-scale learning."""
    for _ in range(n_iterations):
        _pmmh_step(state, n_particles)
    return state


@dataclass
class PmmhSamples:
    params: dict[str, np.ndarray]
    latents: dict[str, np.ndarray]
    log_marg_like: np.ndarray
    log_marg_like_pen: np.ndarray     # log Z + log prior, for marginal-MAP search
    acceptance_rate: float


def pmmh_samples(state: PmmhState, n_iterations: int, n_particles: int,
                 thin: int = 1) -> PmmhSamples:
    """Sampling phase: adaptation frozen, every thin-th draw retained."""
    if thin < 1:
        raise ValueError("thin must be >= 1")
    if state.adapt_iterations == 0:
        warnings.warn("pmmh_samples called before any pmmh_update: proposal "
                      "scales were never adapted", stacklevel=2)
    state.adapting = False
    kept_params: dict[str, list[float]] = {p.name: [] for p in state.params}
    kept_latents: dict[str, list[float]] = {}
    log_z_trace: list[float] = []
    log_pen_trace: list[float] = []
    accepted = 0
    for k in range(1, n_iterations + 1):
        if _pmmh_step(state, n_particles):
            accepted += 1
        if k % thin == 0:
            theta = state.theta
            for name, value in theta.items():
                kept_params[name].append(value)
            for element, value in state.current_latent.items():
                kept_latents.setdefault(element, []).append(value)
            log_z_trace.append(state.log_z)
            log_pen_trace.append(state.log_z + state.log_prior)
    return PmmhSamples(
        params={k: np.asarray(v) for k, v in kept_params.items()},
        latents={k: np.asarray(v) for k, v in kept_latents.items()},
        log_marg_like=np.asarray(log_z_trace),
        log_marg_like_pen=np.asarray(log_pen_trace),
        acceptance_rate=accepted / n_iterations if n_iterations else 0.0)


# ---------------------------------------------------------------------------
# Sensitivity analysis
# ---------------------------------------------------------------------------

@dataclass
class SensitivityResult:
    """Marginal-likelihood estimates over a grid of parameter assignments."""

    param_names: list[str]
    assignments: list[dict]
    log_marg_like: np.ndarray
    failed: np.ndarray                 # True where the run degenerated

    @property
    def argmax(self) -> int:
        return int(np.argmax(np.where(self.failed, -np.inf, self.log_marg_like)))

    @property
    def best(self) -> dict:
        return self.assignments[self.argmax]

    def to_dict(self) -> dict:
        return {"param_names": self.param_names,
                "assignments": [{k: (v.tolist() if isinstance(v, np.ndarray)
                                     else v)
                                 for k, v in a.items()}
                                for a in self.assignments],
                "log_marg_like": [None if f else v for v, f in
                                  zip(self.log_marg_like.tolist(),
                                      self.failed.tolist())],
                "argmax": self.argmax}

    def to_json(self) -> str:
        import json
        return json.dumps(self.to_dict(), sort_keys=True)


def _apply_assignment(data: DataTable, name: str, value) -> None:
    from .graph import parse_element
    base, index = parse_element(name)
    if not index:
        data.set(base, np.asarray(value, dtype=np.float64))
        return
    if base not in data:
        raise KeyError(f"cannot assign '{name}': no data entry '{base}' "
                       "to modify")
    entry = data[base]
    flat = int(np.ravel_multi_index(tuple(i - 1 for i in index), entry.dims))
    entry.values[flat] = float(value)
    entry.mask[flat] = True


def smc_sensitivity(model: Model, param_values: dict[str, list],
                    n_particles: int, seed: int = 0,
                    resampling: str = "systematic",
                    threshold: float = 0.5) -> SensitivityResult:
    """One SMC marginal-likelihood estimate per grid point.

    ``param_values`` maps names (whole arrays or elements) to equal-length
    lists of assignments; point j uses entry j of every list and the seed
    ``seed + j``, so a single point reproduces a plain run at that seed.
    Degenerate runs are recorded as flagged -inf; the scan continues.
    """
    names = list(param_values)
    if not names:
        raise ValueError("no parameters given")
    lengths = {len(v) for v in param_values.values()}
    if len(lengths) != 1:
        raise ValueError("all parameter lists must have the same length")
    count = lengths.pop()
    log_ml = np.empty(count)
    failed = np.zeros(count, dtype=bool)
    assignments = []
    for j in range(count):
        assignment = {name: param_values[name][j] for name in names}
        assignments.append(assignment)
        data = model.data.copy()
        for name, value in assignment.items():
            _apply_assignment(data, name, value)
        try:
            point_model = model.with_data(data)
            output = point_model.smc([], n_particles, resampling=resampling,
                                     threshold=threshold, seed=seed + j)
            log_ml[j] = output.log_marg_like
        except (DegenerateWeightsError, CompileError):
            log_ml[j] = -math.inf
            failed[j] = True
    return SensitivityResult(names, assignments, log_ml, failed)
