"""Data-driven dissipative dynamic output-feedback synthesis for
discrete-time LTI systems."""

from .model import (Controller, FrequencyCurve, Plant, StateSpace, close_loop,
                    frequency_response, simulate, transform_realization)
from .data import (ConsistencySet, DataRecord, DisturbanceBound,
                   build_phi_tilde, check_assumptions, energy_phi, membership,
                   nominal_system, record, residual_factor, sample_members)
from .lmi import (AffineLmi, SdpProblem, SdpSolution, definiteness,
                  psd_factor, solve_sdp)
from .synthesis import (DecisionVars, GoldenStrategy, GridStrategy,
                        SupplyRate, SynthesisIngredients, SynthesisResult,
                        assemble_pi, hinf_supply, reconstruct, search_alpha,
                        solve_fixed_alpha, supply_factor)
from .analysis import (Certificate, certify_dissipativity, hinf_bisect,
                       s_lemma_check, storage_trajectory_check,
                       worst_case_check)

__version__ = "0.1.0"
