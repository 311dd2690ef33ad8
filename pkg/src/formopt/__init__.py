"""Active-learning Bayesian optimization for expensive forming simulations.

Core pieces: an append-only result store, candidate-space generation,
a multi-output latent-variable GP surrogate, expected-improvement
acquisition with parallel-sample strategies, a per-part mixture of
experts with a geometric gating encoder, a synthetic "virtual press"
simulation backend, and the optimization loop tying them together.
"""

__version__ = "0.1.0"
