#!/usr/bin/env python3
"""
Run script for the Analytic Diffusion Lab MCP server.

This script provides a simple way to start the server on stdio.
"""

from analytic_diffusion.main import run_server

if __name__ == "__main__":
    run_server()
