"""Subgraph-aware virtual screening with LFDR-guided seed refinement.

Modules are imported on demand; ``import subdyve`` stays cheap so the
command line can cap BLAS threads before numpy loads.
"""

__version__ = "0.1.0"
