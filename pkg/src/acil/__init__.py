"""Action-constrained imitation learning with DTW-aligned surrogate demonstrations."""
from .alignment import AlignmentConfig, SurrogateDataset, align_trajectory, dtwil_generate
from .config import RunConfig, derive_seed, load_config, parse_config
from .constraints import Box, L2Groups, PositivePartSum, Unconstrained, WeightedAbsSum, is_feasible, parse_constraint, project
from .data import Dataset, Trajectory, read_dataset, write_dataset
from .dtw import dtw_distance, progression_advancement
from .dynamics import DynamicsEnsemble, train_ensemble
from .envs import FreeIntegrator, PointMassMaze, make_env
from .imitation import BCConfig, PolicyNet, evaluate_policy, train_bc
from .planner import CemConfig, ErcConfig, plan_step

__version__ = "0.1.0"
