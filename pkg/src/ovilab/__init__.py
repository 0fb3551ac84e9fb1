"""Kernel and neural optimistic least-squares value iteration on synthetic MDPs."""
from .errors import (ConstructionError, InputError, InvariantViolation, NumericalError,
                     SpectrumAccuracyError, StateError)
from .kernels import (DataBlock, DecayClass, KernelSpec, StateActionPoint, gram_matrix, info_gain,
                      krr_fit, linear_kernel, predict, ucb_bonus)
from .kovi import KoviAgent, KoviConfig, run_kovi, run_uniform
from .mdp import (EpisodicMdp, Trajectory, ValueTables, apply_bellman, exact_optimal_values,
                  make_linear_mdp, make_sphere_mdp, policy_evaluation, rollout)
from .novi import (NoviAgent, NoviConfig, OracleConfig, TwoLayerNet, empirical_ntk, init_symmetric,
                   minimize_loss, run_novi, tangent_features)
from .records import RegretRecord, regret_exponent
from .spectrum import (BetaSchedule, SphericalSpectrum, bt_schedule, covering_bound,
                       funk_hecke_eigenvalue, gamma_bound, harmonic_multiplicity, ntk_closed_form)
from .diagnostics import DiagnosticsReport

__version__ = "0.1.0"
