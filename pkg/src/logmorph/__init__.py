"""Log-morphology red blood cell deformation on unstructured finite element meshes."""
from ._jit import NUMBA_ENABLED
from .morphology import ModelParams, KinematicsSample, sigma_eff, sigma_f
from .spectral import GuardThresholds, eig_sym
from .stabilization import StabConfig
from .solver import SolverConfig, RunMetrics
from .mesh import Mesh, load_mesh, save_mesh, mini_stirrer
from .flow import FlowSpec, build_flow
from .case import CaseConfig, load_config, parse_config, run_case, compare_runs, line_sample

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED", "ModelParams", "KinematicsSample", "sigma_eff", "sigma_f", "GuardThresholds",
    "eig_sym", "StabConfig", "SolverConfig", "RunMetrics", "Mesh", "load_mesh", "save_mesh",
    "mini_stirrer", "FlowSpec", "build_flow", "CaseConfig", "load_config", "parse_config", "run_case",
    "compare_runs", "line_sample",
]
