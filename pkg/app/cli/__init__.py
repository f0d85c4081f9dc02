"""
Command-line entry point for simulation, rendering and stimulus generation.
"""
