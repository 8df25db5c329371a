"""
Main entry point for the Analytic Diffusion Lab MCP server.
Registers every experiment command as an MCP tool. Only the stdio transport
is supported.
"""

import os
import sys
from typing import Dict, Optional

from dotenv import load_dotenv

from analytic_diffusion.defaults import DEFAULT_LOG_LEVEL

# Load environment variables from .env file
print("Loading configuration from .env file...", file=sys.stderr)
load_dotenv()
# Set required environment variable for FastMCP 2.8.1+
os.environ.setdefault('FASTMCP_LOG_LEVEL', DEFAULT_LOG_LEVEL)
from fastmcp import FastMCP
from mcp.types import ToolAnnotations

from analytic_diffusion.utils.log_utils import setup_logging
from analytic_diffusion.tools import (
    benchmark_tools,
    mask_tools,
    perturb_tools,
    sample_tools,
    sensitivity_tools,
    single_step_tools,
    stats_tools,
)


# Initialize FastMCP server
mcp = FastMCP("Analytic Diffusion Lab")


def register_tools():
    """Register all tools with the MCP server using FastMCP decorators."""

    @mcp.tool(
        annotations=ToolAnnotations(
            title="Dataset Statistics",
            destructiveHint=True,
        ),
    )
    async def dataset_stats(config_path: str = None, overrides: Optional[Dict[str, str]] = None):
        """Fit mean and covariance spectrum of a dataset; write eigenvalues, SNR table and top components."""
        return await stats_tools.run_stats(config_path, overrides)

    @mcp.tool(
        annotations=ToolAnnotations(
            title="Build Masks",
            destructiveHint=True,
        ),
    )
    async def build_masks(config_path: str = None, overrides: Optional[Dict[str, str]] = None):
        """Build per-pixel binary masks from dataset statistics (or a measured kernel) and save them."""
        return await mask_tools.run_masks(config_path, overrides)

    @mcp.tool(
        annotations=ToolAnnotations(
            title="Sample Images",
            destructiveHint=True,
        ),
    )
    async def sample_images(config_path: str = None, overrides: Optional[Dict[str, str]] = None):
        """Run DDIM with every configured denoiser from the same initial noise.

        Writes images, a grid, nearest-neighbour distances and a manifest per denoiser.
        """
        return await sample_tools.run_sample(config_path, overrides)

    @mcp.tool(
        annotations=ToolAnnotations(
            title="Sensitivity Fields",
            destructiveHint=True,
        ),
    )
    async def sensitivity_fields(config_path: str = None, overrides: Optional[Dict[str, str]] = None):
        """Render the sensitivity field of one output pixel across timesteps for every configured denoiser."""
        return await sensitivity_tools.run_sensitivity(config_path, overrides)

    @mcp.tool(
        annotations=ToolAnnotations(
            title="Perturb Dataset",
            destructiveHint=True,
        ),
    )
    async def perturb_dataset(config_path: str = None, overrides: Optional[Dict[str, str]] = None):
        """Inject a stencil pattern at each perturb.gamma and measure how statistics and sensitivity change."""
        return await perturb_tools.run_perturb(config_path, overrides)

    @mcp.tool(
        annotations=ToolAnnotations(
            title="Benchmark Denoisers",
            destructiveHint=True,
        ),
    )
    async def benchmark_denoisers(config_path: str = None, overrides: Optional[Dict[str, str]] = None):
        """Pairwise r² and MSE between configured denoisers and external prediction files."""
        return await benchmark_tools.run_benchmark(config_path, overrides)

    @mcp.tool(
        annotations=ToolAnnotations(
            title="Nearest Training Image",
            destructiveHint=True,
        ),
    )
    async def nearest_neighbor(config_path: str = None, overrides: Optional[Dict[str, str]] = None):
        """Find the closest training image (and its distance) for each image of nn.image."""
        return await benchmark_tools.run_nearest_neighbor(config_path, overrides)

    @mcp.tool(
        annotations=ToolAnnotations(
            title="Single-Step Denoising",
            destructiveHint=True,
        ),
    )
    async def single_step(config_path: str = None, overrides: Optional[Dict[str, str]] = None):
        """Noise held-out images (single_step.image) once per timestep and denoise them in one step.

        Reports MSE to the clean inputs and nearest-training-image distance per denoiser.
        """
        return await single_step_tools.run_single_step(config_path, overrides)


def run_server(debug: bool = False):
    """Run the Analytic Diffusion Lab MCP server on stdio."""
    setup_logging(debug or os.getenv('ADL_DEBUG', '').lower() in ('1', 'true', 'yes'))

    # Register all tools
    register_tools()

    print("Starting Analytic Diffusion Lab MCP server with stdio transport...", file=sys.stderr)
    try:
        mcp.run(transport='stdio')
    except KeyboardInterrupt:
        print("\nShutting down server...", file=sys.stderr)
    except Exception as e:
        print(f"Error starting server: {e}", file=sys.stderr)
        if debug:
            import traceback
            traceback.print_exc()
        sys.exit(1)


def main():
    """Main entry point for the server."""
    run_server()


if __name__ == "__main__":
    main()
