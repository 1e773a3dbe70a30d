"""Budget-conditioned reachability for tabular constrained MDPs."""

from .budget import (
    DIRECT, SOFT, AugmentedMdp, BudgetGrid, BudgetRule, InfeasibleBudgetError, InfeasibleStartError,
    build_augmented_mdp, init_budget, make_budget_grid, snap_budget, update_budget,
)
from .cmdp import TabularCmdp, Trajectory, ValidationReport, mc_evaluate, rollout, sample_next, validate_cmdp
from .reachability import CostCritic, is_state_feasible, min_cost_value_iteration, safe_action_set
from .solver import (
    BudgetPolicy, CmdpSolution, evaluate_policy_exact, extract_policy, solve_augmented, solve_cmdp_lp,
)

__version__ = "0.1.0"
