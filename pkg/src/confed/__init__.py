"""Deterministic simulator for confederated learning.

Multiple models evolve in parallel in a content-addressed DAG: learners
pick the models worth training via a popularity-scaled score, filter peer
updates by weight divergence, and publish selections that every replica
aggregates to identical bytes.
"""

__version__ = "0.1.0"
