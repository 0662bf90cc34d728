"""
detpomdp application root package.
"""
