"""Shared test configuration.

The hypothesis profile removes per-example deadlines (several properties
exercise whole solver runs) and derandomizes so CI failures replay exactly.
"""

from hypothesis import settings

settings.register_profile("suite", deadline=None, derandomize=True)
settings.load_profile("suite")
