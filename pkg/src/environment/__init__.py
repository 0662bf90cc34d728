"""
Episode simulation, cost accounting and policy evaluation.
"""
