"""Shared-parameter OUT autoregressive model (spOUTAR).

Two multivariate time series (before/after a break) are mapped to
independent latent AR processes through ``Z = U^T D (I - L_k) Y_k``;
the periods share ``D``, ``U`` and the AR parameters and differ only in
the sparse lower-triangular ``L_1``/``L_2``.
"""

__version__ = "0.1.0"
