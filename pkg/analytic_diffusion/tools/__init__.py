"""
Experiment commands for the Analytic Diffusion Lab.

Each module exposes ``cmd_*`` functions taking a RunConfig and returning a
dict of artifacts, plus async ``run_*`` wrappers that return JSON strings for
the MCP server.
"""

from analytic_diffusion.tools.stats_tools import cmd_stats, run_stats
from analytic_diffusion.tools.mask_tools import cmd_masks, run_masks
from analytic_diffusion.tools.sample_tools import cmd_sample, run_sample
from analytic_diffusion.tools.sensitivity_tools import cmd_sensitivity, run_sensitivity
from analytic_diffusion.tools.perturb_tools import cmd_perturb, run_perturb
from analytic_diffusion.tools.benchmark_tools import cmd_benchmark, cmd_nn, run_benchmark, run_nearest_neighbor
from analytic_diffusion.tools.single_step_tools import cmd_single_step, run_single_step

COMMANDS = {
    "stats": cmd_stats,
    "masks": cmd_masks,
    "sample": cmd_sample,
    "sensitivity": cmd_sensitivity,
    "perturb": cmd_perturb,
    "benchmark": cmd_benchmark,
    "nn": cmd_nn,
    "single-step": cmd_single_step,
}
