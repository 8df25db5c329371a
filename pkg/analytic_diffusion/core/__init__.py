"""
Numerical core: dataset statistics, closed-form denoisers, DDIM sampling,
sensitivity fields and metrics. Nothing in here touches argparse or MCP.
"""
