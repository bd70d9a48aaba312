"""Simulator for nonreciprocal scattering by pairs of two-level-atom arrays."""

__version__ = "0.1.0"

from .errors import (AtomArrayError, CapacityError, ConfigError, ConvergenceError,
                     SingularityError)
from .lattice import K0, AtomSystem, SystemConfig, build_system, from_positions, validate_config
from .coupling import CouplingMatrices, coupling_matrices, drive_vector, greens_tensor
from .spectral import (EffectiveHamiltonian, EigenMode, bloch_state, classify_dark_bright,
                       darkstate_scaling, effective_hamiltonian, eigenmodes,
                       infinite_lattice_decay)
from .quantum import (DensityMatrix, Liouvillian, build_liouvillian, dark_state_population,
                      evolve, expectation_sigma, steady_state, to_eigenbasis,
                      von_neumann_entropy)
from .meanfield import (MeanFieldState, PhaseStats, integrate_to_steady, linear_response,
                        mean_field_rhs, phase_statistics)
from .scattering import (CrossSectionReport, FieldSample, cross_sections, far_field_amplitude,
                         field_map, nonreciprocal_efficiency, scattered_field,
                         single_atom_reference, total_cross_section)
from .optimizer import OptParams, OptSettings, OptTrace, finite_diff_gradient, objective, optimize
