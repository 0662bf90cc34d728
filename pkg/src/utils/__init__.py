"""
Shared utilities: errors, artifact I/O and the experiment config schema.
"""
