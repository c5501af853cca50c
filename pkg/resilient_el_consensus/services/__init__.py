"""
Services: graph analysis, arm dynamics, protocol, adversaries, simulation and metrics.
"""
