"""Maximum-entropy statistical equilibria of one-species N-body systems.

Finite-N dynamics and microcanonical sampling, phase-space density
functionals, the mean-field maximum-entropy fixed point, Vlasov evolution
on a 4D grid and Kantorovich-Rubinstein distances tying them together.
"""
from . import potentials, nbody, statefield, transport, maxent, vlasov, ensemble

__version__ = "0.1.0"

__all__ = ["potentials", "nbody", "statefield", "transport", "maxent", "vlasov", "ensemble", "__version__"]
