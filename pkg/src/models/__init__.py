"""
Deterioration models: discretization, correlation structures and model files.
"""
