"""Shipped example models: model text, seeded data generators, ground truth.

Each bundle pairs a model file with a data table ready for inference (fixed
constants plus forward-sampled observations) and keeps the latent ground
truth aside for evaluation. Bundles write themselves to disk as a
``.bug`` + ``.json`` pair consumable by the command-line driver.

Also home of the Lotka-Volterra Gillespie transition sampler registered as
the custom distribution ``LV``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .compiler import forward_sample_data
from .data import DataTable, save_data
from .model import Model
from .registry import DistFuncRegistry, default_registry


def model_source(name: str) -> str:
    """Text of a shipped model file (e.g. ``volatility_switching``)."""
    path = resources.files("bugsmc").joinpath("models", f"{name}.bug")
    return path.read_text(encoding="utf-8")


# ---------------------------------------------------------------------------
# Gillespie sampler for the Lotka-Volterra jump process
# ---------------------------------------------------------------------------

def gillespie_lv(x, c1: float, c2: float, c3: float, dt: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Advance prey/predator counts by ``dt`` of exact jump-process dynamics.

    Reactions and hazards: prey birth (c1*x1), predation turning prey into a
    predator (c2*x1*x2), predator death (c3*x2). Waiting times are
    exponential with the total hazard; the state just before the first event
    overshooting ``dt`` is returned. An all-zero hazard state is absorbing.
    """
    x1, x2 = float(x[0]), float(x[1])
    t = 0.0
    while True:
        r1 = c1 * x1
        r2 = c2 * x1 * x2
        r3 = c3 * x2
        total = r1 + r2 + r3
        if total <= 0.0:
            return np.array([x1, x2])
        t -= math.log(rng.random()) / total
        if t > dt:
            return np.array([x1, x2])
        u = rng.random() * total
        if u <= r1:
            x1 += 1.0
        elif u <= r1 + r2:
            x1 -= 1.0
            x2 += 1.0
        else:
            x2 -= 1.0


def lv_dim(param_dims: list) -> tuple[int, int]:
    """The LV sampler produces a 2x1 count vector from its 5 inputs."""
    return (2, 1)


def _lv_sample(params: list, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(params[0], dtype=np.float64).reshape(-1)
    c1, c2, c3, dt = (float(np.asarray(p).reshape(-1)[0]) for p in params[1:])
    return gillespie_lv(x, c1, c2, c3, dt, rng)


def register_lotka_volterra(registry: DistFuncRegistry) -> None:
    """Register the density-less ``LV`` transition sampler (5 inputs)."""
    registry.register_distribution("LV", 5, lv_dim, _lv_sample)


def extended_registry() -> DistFuncRegistry:
    """Built-ins plus the shipped extensions (used by the CLI)."""
    registry = default_registry()
    register_lotka_volterra(registry)
    return registry


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------

@dataclass
class ExampleBundle:
    name: str
    model_source: str
    data: DataTable                      # constants + observations, for inference
    truth: dict[str, np.ndarray] = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    monitors: list[str] = field(default_factory=list)
    needs_lv: bool = False

    def registry(self) -> DistFuncRegistry:
        return extended_registry() if self.needs_lv else default_registry()

    def model(self) -> Model:
        return Model(self.model_source, self.data, registry=self.registry(),
                     name=self.name)

    def write(self, directory: str) -> tuple[str, str]:
        """Materialize the ``.bug`` + ``.json`` pair for the CLI."""
        os.makedirs(directory, exist_ok=True)
        model_path = os.path.join(directory, f"{self.name}.bug")
        data_path = os.path.join(directory, f"{self.name}_data.json")
        with open(model_path, "w", encoding="utf-8") as fh:
            fh.write(self.model_source)
        save_data(self.data, data_path)
        return model_path, data_path


def _observations(source: str, constants: dict, targets: list[str], seed,
                  registry: DistFuncRegistry | None = None) -> DataTable:
    model = Model(source, constants, registry=registry)
    return forward_sample_data(model.graph, targets, seed)


def build_volatility_bundle(t_max: int = 100, seed: int = 20) -> ExampleBundle:
    """Switching volatility with fixed, known parameters."""
    constants = {"t_max": t_max, "sigma": 0.4, "alpha": [-2.5, -1.0],
                 "phi": 0.5, "pi": [[0.9, 0.1], [0.1, 0.9]], "c0": 1,
                 "x0": 0.0}
    sampled = _observations(model_source("volatility_switching"), constants,
                            ["y"], seed)
    data = DataTable.from_dict(constants)
    data.set("y", sampled["y"].values)
    return ExampleBundle(
        name="volatility_switching",
        model_source=model_source("volatility_switching"),
        data=data,
        truth={"x": sampled["x"].values, "c": sampled["c"].values},
        params={"sigma": 0.4, "alpha": (-2.5, -1.0), "phi": 0.5,
                "pi11": 0.9, "pi22": 0.9},
        monitors=["x"])


def build_volatility_param_bundle(t_max: int = 100, seed: int = 20) -> ExampleBundle:
    """Switching volatility with the six unknown parameters for PMMH.

    Observations are generated from the fixed-parameter model at the
    documented true values; the inference model sees only t_max and y.
    """
    base = build_volatility_bundle(t_max=t_max, seed=seed)
    data = DataTable.from_dict({"t_max": t_max})
    data.set("y", base.data["y"].values)
    return ExampleBundle(
        name="volatility_switching_param",
        model_source=model_source("volatility_switching_param"),
        data=data,
        truth=base.truth,
        params=dict(base.params,
                    pmmh_params=("gamma[1]", "gamma[2]", "phi", "tau",
                                 "pi[1,1]", "pi[2,2]"),
                    pmmh_inits=(-1.0, 1.0, 0.5, 5.0, 0.8, 0.8),
                    latent_names=("x", "alpha[1]", "alpha[2]", "sigma")),
        monitors=["x"])


def build_kinetic_bundle(t_max: int = 40, seed: int = 20) -> ExampleBundle:
    """Lotka-Volterra counts observed through prey measurements (sd 10)."""
    constants = {"t_max": t_max, "x_init": [100.0, 100.0],
                 "c": [0.5, 0.0025, 0.3], "sigma": 10.0}
    sampled = _observations(model_source("kinetic_lotka_volterra"), constants,
                            ["y"], seed, registry=extended_registry())
    data = DataTable.from_dict(constants)
    data.set("y", sampled["y"].values)
    return ExampleBundle(
        name="kinetic_lotka_volterra",
        model_source=model_source("kinetic_lotka_volterra"),
        data=data,
        truth={"x": sampled["x"].values},
        params={"c": (0.5, 0.0025, 0.3), "sigma": 10.0,
                "x_init": (100.0, 100.0)},
        monitors=["x"],
        needs_lv=True)


def build_lgssm_bundle(t_max: int = 20, rho: float = 0.9,
                       seed: int = 11) -> ExampleBundle:
    """Linear-Gaussian state space; exact answers come from a Kalman filter."""
    constants = {"t_max": t_max, "rho": rho}
    sampled = _observations(model_source("lgssm"), constants, ["y"], seed)
    data = DataTable.from_dict(constants)
    data.set("y", sampled["y"].values)
    return ExampleBundle(
        name="lgssm",
        model_source=model_source("lgssm"),
        data=data,
        truth={"x": sampled["x"].values},
        params={"rho": rho},
        monitors=["x"])


def build_hmm_bundle(t_max: int = 15, seed: int = 11) -> ExampleBundle:
    """Two-state hidden Markov chain; exact answers via the forward pass."""
    constants = {"t_max": t_max, "p0": [0.5, 0.5],
                 "p": [[0.8, 0.2], [0.3, 0.7]],
                 "e": [[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]]}
    sampled = _observations(model_source("hmm2"), constants, ["y"], seed)
    data = DataTable.from_dict(constants)
    data.set("y", sampled["y"].values)
    return ExampleBundle(
        name="hmm2",
        model_source=model_source("hmm2"),
        data=data,
        truth={"c": sampled["c"].values},
        params={"p": ((0.8, 0.2), (0.3, 0.7))},
        monitors=["c"])


def build_normal_mean_bundle(n_obs: int = 20, theta: float = 0.7,
                             seed: int = 11) -> ExampleBundle:
    """Conjugate normal-location model with a closed-form posterior."""
    rng = np.random.default_rng(seed)
    y = theta + rng.standard_normal(n_obs)
    data = DataTable.from_dict({"n_obs": n_obs, "y": y})
    prior_prec, obs_prec = 0.01, 1.0
    post_prec = prior_prec + obs_prec * n_obs
    post_mean = obs_prec * y.sum() / post_prec
    return ExampleBundle(
        name="normal_mean",
        model_source=model_source("normal_mean"),
        data=data,
        truth={"theta": np.array([theta])},
        params={"posterior_mean": post_mean,
                "posterior_var": 1.0 / post_prec},
        monitors=["theta"])
