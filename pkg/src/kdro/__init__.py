"""Kernel distributionally robust optimization.

Batch solver for the dual semi-infinite program over RKHS ambiguity sets,
weak-duality certificates, a primal worst-case oracle, and stochastic
functional-gradient training with random Fourier features.
"""

from .ambiguity import MinkowskiSum, NormBall, Polytope, membership, support
from .batch import (Certificate, KdroProblem, KdroResult, certify, default_epsilon, ipm_dual_solve,
                    relaxed_solve, solve_kdro, worst_case_risk)
from .features import FeatureMap, approx_norm, sample_features
from .kernels import Embedding, KernelSpec, RkhsFunction, gram, inner, mmd, rkhs_norm
from .models import (BinaryCrossEntropy, Custom, HingeShift, LossSpec, TwoLayerNet, UncertainLeastSquares,
                     eval_loss, grad_theta)
from .sfg import ProposalSpec, SfgResult, SfgState, evaluate_robustness, functional_grads, train
from .solver import (DiscreteDistribution, DivergenceError, DualSolution, SolverConfig, SolverError,
                     csa_solve, dual_solve, primal_oracle)

__version__ = "0.1.0"
