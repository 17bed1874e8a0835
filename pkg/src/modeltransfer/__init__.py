"""Model transfer for reinforcement learning by maximum-likelihood mixing of source models."""

from ._backend import BACKEND
from .analysis import (RegretOracle, best_kl_proxy, kl_model_divergence, l1_model_distance,
                       performance_gap_bound, realisability_gap, regret_of_policy, weissman_bound)
from .baselines import (DirichletPosterior, MatrixRegressionPosterior, NormalGammaPosterior, dirichlet_update,
                        mvr_update, psrl_sample_lqr, psrl_sample_tabular, run_psrl)
from .envs import Environment, env_step, make_cartpole_lqr, make_chain, make_random_lqr
from .errors import GenerationError, InvalidArgumentError, NotStabilizableError, NumericalError
from .likelihood import (CountTable, TransitionDataset, count_statistics, log_lik_lqr, log_lik_tabular)
from .models import LQRModel, MixtureWeights, SourceSet, TabularMDP, mix, mix_lqr, mix_tabular
from .planning import (LQRGain, TabularPolicy, lqr_value, plan_lqr, policy_evaluation, solve_riccati,
                       value_iteration)
from .runner import AgentConfig, RunLog
from .simplex import OptimizerReport, SimplexProblem, maximize_on_simplex, project_to_simplex
from .transfer import (MetaConfig, TransferState, meta_select, mlemtrl_step, run_empirical, run_meta_mlemtrl,
                       run_mlemtrl, run_oracle)

__version__ = "0.1.0"
