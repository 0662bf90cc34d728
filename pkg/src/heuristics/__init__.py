"""
Heuristic inspection and repair rules and their grid search.
"""
