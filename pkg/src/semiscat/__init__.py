"""Semiclassical and quantum scattering by smooth compactly supported potentials."""
from .classical import (Branch, DeflectionTable, assumption2_check, assumption3_check,
                        classical_dcs, deflection_radial, deflection_table, find_branches,
                        phase_F, pushforward_integral, sigma_cl)
from .errors import (BranchUncertain, ConfigError, DegenerateCaustic, EnergyDrift, MatchFailure,
                     NonregularDirection, OrbitingDetected, QuadratureUnderResolved,
                     ScatteringError, TailNotConverged, TrappedRay)
from .potential import BumpPart, ImpactRegion, Potential, eval_q, grad_q, hess_q, impact_set
from .quantum import (PhaseShiftTable, gamma_n, phase_shifts, quantum_amplitude,
                      surface_integral_amplitude, total_xsec_optical)
from .rays import (IntegratorOptions, Ray, action_S, direction_J, integrate_ray, maslov_index,
                   nontrapping_scan, trace_rays, variational_flow)
from .semiclassical import SemiclassicalAmplitude, semiclassical_dcs, vainberg_amplitude

__version__ = "0.1.0"
