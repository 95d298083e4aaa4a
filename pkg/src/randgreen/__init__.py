"""Green measures of compound Poisson processes and Monte Carlo random potentials."""

__version__ = "0.1.0"

from .errors import RandGreenError  # noqa: F401
from .kernels import GridSpec, make_kernel  # noqa: F401
