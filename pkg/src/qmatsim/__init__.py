"""Simulator and exact accounting for the Q-MAT scheme on the MISO broadcast channel
with delayed and imperfect current CSIT."""

from .channel import CsitLedger, SimParams, draw_channel
from .engine import QmatTrial, Transmitter, decode_user
from .harness import ExperimentConfig, ResultsTable, emit_plot_data, estimate_slope, run_experiment
from .quantizer import build_codebook, two_step_quantize
from .scheduler import build_round_schedule, dof_baselines, dof_from_schedule, dof_qmat, harmonic

__version__ = "0.1.0"
