"""Hybrid Benders / QUBO unit-commitment solver with an annealed master."""

from .instance import (Generator, InstanceFormatError, Line, UcInstance,
                       ValidationError, load_instance, save_instance, synth_instance)
from .milp import (LinearProgram, LpSolution, MilpModel, MilpResult,
                   NumericalInstabilityError, solve_lp, solve_milp)
from .formulation import (CommitmentSchedule, DispatchSolution, ScheduleCost,
                          SubproblemSolver, build_full_uc, build_max_eta,
                          build_subproblem, evaluate_schedule_cost, solve_max_eta)
from .qubo import (BendersCut, EtaEncoding, MasterQubo, Penalties, Qubo,
                   build_master_qubo, decode_sample, default_penalties,
                   eta_encoding_width, extract_raw_cut, round_cut,
                   read_qubo_text, write_qubo_text)
from .sampler import (AnnealParams, SampleSet, SamplerError, available_samplers,
                      exhaustive_sample, get_sampler, make_noisy_sampler,
                      register_sampler, simulated_annealing_sample)
from .loop import (BendersResult, HybridResult, IterationRecord, LoopConfig,
                   RecoveryInfeasibleError, detect_stall, k_local_recovery,
                   run_benders, run_gvns, run_hybrid, solve_oracle)

__version__ = "0.1.0"
