"""Market-maker optimal position management: python surface of the C++ core.

The compiled extension provides model building/validation, the coefficient
solvers, the small-noise expansion, the finite-difference reference solve and
the Monte Carlo estimators.
"""

try:
    from ._core import *  # noqa: F401,F403  (installed package layout)
    from . import _core as _impl  # noqa: F401
except ImportError:  # build-tree layout: module directory on PYTHONPATH
    from _core import *  # noqa: F401,F403
    import _core as _impl  # noqa: F401

__version__ = "0.1.0"
