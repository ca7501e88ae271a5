"""Finite-volume neural network for nonlinear diffusion-sorption transport.

The package couples a ground-truth finite-volume simulator with a trainable
counterpart whose flux kernels (learnable stencil plus a strictly positive
diffusion module) are integrated closed-loop through a differentiable ODE
solver, enabling recovery of the retardation factor from concentration data.
"""

from .dataio import (Dataset, ScenarioConfig, extract_breakthrough,
                     extract_profile, generate_scenario_dataset,
                     load_checkpoint, preset, read_dataset, save_checkpoint,
                     write_dataset)
from .fvm import (Cauchy, Dirichlet, FieldPair, Grid1D, Neumann, SoilParams,
                  flux_divergence, ghost_values, retardation_freundlich,
                  simulate_diffusion_sorption)
from .integrate import integrate_adaptive, integrate_fixed
from .model import (FinnConfig, default_d_init, extract_retardation,
                    finn_rhs, flux_kernel, init_params, rollout, state_kernel)
from .nn import AdamState, MlpParams, ParamStore, adam_step, mlp_forward, mlp_init
from .tape import Tape, Var
from .train import (BreakthroughOnly, EvalReport, FinalProfileOnly, FullField,
                    TrainConfig, add_noise, evaluate, mse_loss, run_experiment,
                    train_finn)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "BreakthroughOnly", "Cauchy", "Dataset", "Dirichlet",
    "EvalReport", "FieldPair", "FinalProfileOnly", "FinnConfig", "FullField",
    "Grid1D", "MlpParams", "Neumann", "ParamStore", "ScenarioConfig",
    "SoilParams", "Tape", "TrainConfig", "Var", "adam_step", "add_noise",
    "default_d_init", "evaluate", "extract_breakthrough", "extract_profile",
    "extract_retardation", "finn_rhs", "flux_divergence", "flux_kernel",
    "generate_scenario_dataset", "ghost_values", "init_params",
    "integrate_adaptive", "integrate_fixed", "load_checkpoint", "mlp_forward",
    "mlp_init", "mse_loss", "preset", "read_dataset", "retardation_freundlich",
    "rollout", "run_experiment", "save_checkpoint", "simulate_diffusion_sorption",
    "state_kernel", "train_finn", "write_dataset",
]
