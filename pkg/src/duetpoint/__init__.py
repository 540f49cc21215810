"""Real-time two-character motion synthesis from three-point input.

A small, self-contained stack: planar root-frame motion representation,
BVH ingestion, a from-scratch dense-network engine, the tracking and
mapping networks, an autoregressive duet rollout engine, evaluation
benchmarks and a live streaming service.
"""

__version__ = "0.1.0"
