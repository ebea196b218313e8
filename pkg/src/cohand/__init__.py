"""Gesture-conditioned collaborative handling.

Maps streaming dynamic hand gestures to 6-D Cartesian velocity commands
through a latent-variable sequence model conditioned on a per-user context
database, with training, evaluation, and a real-time steering service.
"""

__version__ = "0.1.0"
