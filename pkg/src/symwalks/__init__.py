"""Symmetrised random walks: path sampling, pair measures, rate functions and bosonic traces."""

from .markov import (EigenPair, Generator, Kernel, StateSpace, boltzmann_kernel, build_generator,
                     eigen_spectrum, feynman_kac_kernel, lattice_laplacian, principal_eig,
                     transition_kernel)
from .paths import (BridgeSampler, JumpPath, LocalTime, PathBatch, RngStream, concatenate_cycle,
                    occupation_local_time, sample_bridge, sample_path)
from .pairs import (GridPairMeasure, PairMeasure, ReferenceMeasure, count_admissible_permutations,
                    discretize, entropy_difference_bound, from_coordinates, marginal_construction,
                    relative_entropy, to_coordinates)
from .ensemble import (EnsembleSpec, LinearFunctional, bose_spec, exact_symmetrized_partition,
                       finite_N_free_energy, mc_mean_field_estimate, observables,
                       sample_ensemble)
from .rates import (J_Q, J_sym, SaddleCertificate, dv_rate, legendre_rate, martingale_kernel,
                    optimal_pair_measure, optimal_potential, pair_entropy_min)
from .bose import (MeanFieldProblem, SymmetricBasis, finite_N_mean_field_free_energy,
                   lift_sum_operator, mean_field_operator, symmetric_trace_cycles,
                   symmetric_trace_exact, telegraph_generator, telegraph_rate,
                   variational_mean_field_free_energy)

__version__ = "0.1.0"
