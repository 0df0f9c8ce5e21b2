"""BUGS-dialect model compiler with sequential Monte Carlo inference.

Models written in a BUGS-style language compile to a directed acyclic graph
of constant, logical, and stochastic nodes; inference runs as black-box
sequential Monte Carlo on an automatically arranged node order, with particle
independent Metropolis-Hastings, particle marginal Metropolis-Hastings,
marginal-likelihood sensitivity scans, and posterior post-processing on top.
"""

from .compiler import compile_model, evaluate_logical, forward_sample_data
from .data import DataTable, load_data, save_data
from .distributions import ParamError, TruncationError
from .graph import CompileError, Graph, Node, format_element, parse_element
from .lexer import LexError, Token, tokenize
from .model import Model, ModelError
from .ordering import (Arrangement, CycleError, arrange, export_dot,
                       group_nodes, topological_sort_prioritized)
from .parser import (ModelAST, ParseError, ValidationReport, format_model,
                     parse_model, parse_source, validate_ast)
from .pmcmc import (PimhState, PmmhState, SensitivityResult, pimh_init,
                    pimh_samples, pimh_update, pmmh_init, pmmh_samples,
                    pmmh_update, smc_sensitivity)
from .postproc import (DensityEstimate, MassTable, SummaryStats, density,
                       summary, table)
from .registry import (DistFuncRegistry, DuplicateNameError, ExtensionError,
                       FrozenRegistryError, default_registry, log_density,
                       sample)
from .smc import (DegenerateWeightsError, DiagnosisReport, Genealogy,
                  ParticleCloud, ProposalPolicy, SmcOutput, diagnose, ess,
                  posterior_expectation, run_smc, sess)

__version__ = "0.1.0"
