"""High-level model object: parse, validate, compile, arrange in one step."""

from __future__ import annotations

import numpy as np

from .compiler import compile_model, forward_sample_data
from .data import DataTable
from .ordering import Arrangement, arrange
from .parser import parse_source, validate_ast
from .registry import DistFuncRegistry, default_registry
from .smc import SmcOutput, run_smc


class ModelError(Exception):
    """Validation failures collected while building a model."""


class Model:
    """A compiled model plus its arrangement, ready for inference.

    Keeps the source text, AST, and data so dependent routines (sensitivity
    analysis, bundles) can rebuild the graph with modified constants.
    """

    def __init__(self, source: str, data: DataTable | dict,
                 registry: DistFuncRegistry | None = None, name: str = "model"):
        if isinstance(data, dict):
            data = DataTable.from_dict(data)
        self.source = source
        self.name = name
        self.data = data
        self.registry = registry if registry is not None else default_registry()
        self.ast = parse_source(source)
        report = validate_ast(self.ast, self.registry)
        if not report.ok:
            raise ModelError(str(report))
        self.graph = compile_model(self.ast, data, self.registry)
        self.arrangement: Arrangement = arrange(self.graph)

    @classmethod
    def from_file(cls, path: str, data: DataTable | dict,
                  registry: DistFuncRegistry | None = None) -> "Model":
        with open(path, "r", encoding="utf-8") as fh:
            source = fh.read()
        return cls(source, data, registry=registry, name=path)

    @property
    def n_steps(self) -> int:
        return self.arrangement.n

    def forward_sample(self, targets: list[str], seed=0) -> DataTable:
        """Ancestral sampling of target arrays; see
        :func:`bugsmc.compiler.forward_sample_data`."""
        return forward_sample_data(self.graph, targets, seed)

    def smc(self, monitors, n_particles: int, resampling: str = "systematic",
            threshold: float = 0.5, seed=0,
            conditioned: dict[int, np.ndarray] | None = None) -> SmcOutput:
        return run_smc(self.graph, self.arrangement, monitors, n_particles,
                       resampling=resampling, threshold=threshold, seed=seed,
                       conditioned=conditioned)

    def with_data(self, data: DataTable | dict,
                  registry: DistFuncRegistry | None = None) -> "Model":
        """Recompile the same source against a different data table."""
        return Model(self.source, data,
                     registry=registry if registry is not None else
                     _fresh_like(self.registry), name=self.name)


def _fresh_like(registry: DistFuncRegistry) -> DistFuncRegistry:
    """New unfrozen registry carrying over the user-registered extensions."""
    fresh = default_registry()
    for name, dist in registry.distributions.items():
        if name not in fresh.distributions:
            fresh.distributions[name] = dist
    for name, func in registry.functions.items():
        if name not in fresh.functions:
            fresh.functions[name] = func
    return fresh
