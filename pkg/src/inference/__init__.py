"""
Belief updating for systems of deteriorating components.
"""
