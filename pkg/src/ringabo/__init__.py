"""Angular Bloch oscillations of atoms in a rotating ring lattice."""

from .errors import (AccuracyError, DegenerateInputError, DetectionError, IntegratorError,
                     InvalidParameterError, NumericalError, RingABOError)
from .model import (DriveSchedule, Program, RingLatticeParams, UnitSystem, chirp_for_ramp, chirp_phase,
                    eta_of_t, make_params, omega_eff, ramp_for_chirp)
from .reduction import ReducedParams, Trap3DParams, estimate_params, lg_profile, reduce_3d
from .bands import (BandSolution, BlochLabel, band_energies, band_energy_theta, bloch_state_on_ring,
                    group_velocity, shallow_bands, solve_bands)
from .propagation import (WaveFunction, evolve, evolve_band_basis, gauge_map, two_level_evolve)
from .analysis import (BlochSignature, ObservableTrace, adiabatic_prediction, detect_bloch_signature,
                       mean_angular_momentum, phases, trace_derivative)
from .protocols import (ExperimentConfig, LZReport, check_adiabaticity, loading_fidelity, lz_analytics,
                        run_experiment, staircase_prediction)
from .calibration import (CalibrationResult, SensingResult, calibrate_IV, fit_inverse_bloch,
                          infer_angular_acceleration, predicted_inverse_bloch)

__version__ = "0.1.0"
