"""
System reliability: k-out-of-n systems, frames, resistance tables and risk.
"""
