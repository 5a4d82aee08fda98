"""Fractional backward doubly stochastic equations by Girsanov conjugation.

Monte Carlo and quadrature tools for fBm with Hurst index below one half:
fractional operators, the transfer kernel, Girsanov shifts, the extended
divergence, the anticipating SDE, the pathwise BSDE / BDSDE pair and the
associated stochastic PDE field.
"""

__version__ = "0.1.0"

from .grid import GridFunction, Hurst, TimeGrid  # noqa: E402
from .girsanov import GammaSpec, build_frame  # noqa: E402
from .paths import PathEnsemble, sample_ensemble, sample_fbm  # noqa: E402

__all__ = ["GammaSpec", "GridFunction", "Hurst", "PathEnsemble", "TimeGrid", "build_frame",
           "sample_ensemble", "sample_fbm", "__version__"]
