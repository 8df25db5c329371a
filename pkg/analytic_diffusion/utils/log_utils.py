"""
Logging setup shared by the MCP server and the command-line driver.
"""

import logging
import sys

from analytic_diffusion.defaults import DEFAULT_LOG_LEVEL


def setup_logging(debug_mode):
    """
    Setup logging based on debug mode. Everything goes to stderr so the
    stdio transport stays clean.

    Args:
        debug_mode (bool): Whether to enable debug logging
    """
    if debug_mode:
        logging.basicConfig(
            level=logging.DEBUG,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            stream=sys.stderr,
        )
        print("Debug logging enabled", file=sys.stderr)
    else:
        logging.basicConfig(
            level=getattr(logging, DEFAULT_LOG_LEVEL.upper(), logging.INFO),
            format='%(asctime)s - %(levelname)s - %(message)s',
            stream=sys.stderr,
        )
