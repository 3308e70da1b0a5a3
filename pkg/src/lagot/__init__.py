"""Constrained dynamical optimal transport on pushforward families.

Distances, geodesics and metric tensors for families of laws
``rho(theta, .) = g_theta # mu`` computed in particle (Lagrangian) form
from a fixed Monte-Carlo batch of latent samples, plus exact 1D
quantile-coupling oracles to check them against.
"""

__version__ = "0.1.0"

from .sampler import BaseMeasure, SampleBatch, draw, expect
from .pushforward import (AffineND, FeatureExpansion, InadmissibleParameter, LocationScale1D,
                          MapFamily, Rotation2D, Translation, make_family, pushforward_consistency)
from .potential_space import (GaussianRBFBasis, LatticeRBF, PolynomialBasis, PotentialCoefficients,
                              grad_phi, gradient_feature_matrix)
from .metric import (MetricTensor, RankDeficientBasis, metric_map, metric_wasserstein,
                     projection_residual, solve_potential)
from .geodesic import ActionReport, OptimizerOptions, ParamPath, action, distance, geodesic_solve
from .energies import extended_action, extended_geodesic_solve, interaction_energy, linear_energy
from .oracle import closed_form_distance, empirical_quantile, wp_quantile
