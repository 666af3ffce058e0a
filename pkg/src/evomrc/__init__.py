"""Minimax risk classification for sequences of evolving tasks."""

from .datagen import CsvTaskSpec, HyperplaneStream, Task, TaskSequence, gen_hyperplane, ingest_csv
from .errors import ConfigError, ContractError, EvoMRCError, InputError, NumericalError
from .features import FeatureMap, InstanceEmbedding, identity_embedding, rff_embedding
from .mrc import MrcModel, SolverConfig, UncertaintySpec, build_constraints, classify_det, classify_prob, solve
from .scenarios import ScenarioConfig, ScenarioResult, revisit_task, run_cl, run_mda, run_mtl, run_scd, run_single

__all__ = [
    "CsvTaskSpec", "HyperplaneStream", "Task", "TaskSequence", "gen_hyperplane", "ingest_csv",
    "ConfigError", "ContractError", "EvoMRCError", "InputError", "NumericalError",
    "FeatureMap", "InstanceEmbedding", "identity_embedding", "rff_embedding",
    "MrcModel", "SolverConfig", "UncertaintySpec", "build_constraints", "classify_det", "classify_prob", "solve",
    "ScenarioConfig", "ScenarioResult", "revisit_task", "run_cl", "run_mda", "run_mtl", "run_scd", "run_single",
]
