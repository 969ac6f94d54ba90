"""
Dataset generation, experiment runs, sweeps and their outputs
"""
