"""Learning free-energy functionals of particle populations from snapshots.

The package fits an energy (potential, interaction kernel, diffusion scalar)
by adversarially matching proximal transport steps to observed marginals.
"""

import torch

torch.set_default_dtype(torch.float64)

__version__ = "0.1.0"
