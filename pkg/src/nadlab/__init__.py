"""nadlab: directional inductive bias of small neural architectures.

Library + CLI for generating single-feature linearly separable benchmarks,
identifying neural anisotropy directions by two independent algorithms,
verifying the closed-form pooling results against Monte-Carlo oracles, and
running the desk-scale experiment suite.
"""

__version__ = "0.1.0"
