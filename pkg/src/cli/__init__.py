"""
Command-line surface for building models, training, searching and evaluating policies.
"""
