"""Hodge-type decomposition of TD-error fields on finite MDPs, and learners built on it."""
from .errors import ContractError, DivergenceError, HodgeflowError, NumericalError, ShapeError
from .mdp import (FiniteMdp, OccupancyMeasures, exact_occupancy, exact_value, random_mdp, random_policy,
                  uniform_distribution, uniform_policy)
from .hodge import (Cochain0, Cochain1, DiffOperator, HodgeDecomposition, apply_d, apply_d_adjoint, decompose,
                    inner0, inner1, laplacian, mean_defect, solve_poisson, td_field)
from .envs import make_pointmass, make_random_feature_mdp, make_ring, wrap_hold_last, wrap_noisy, wrap_sticky
from .agents import HfpsConfig, make_agent
from .harness import RunConfig, auc_at_t, cauc, cross_seed_std, final_at_t, msve, run_experiment
from .diagnostics import TheoremReport

__version__ = "0.1.0"
