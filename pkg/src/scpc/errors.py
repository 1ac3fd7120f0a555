"""Exception hierarchy shared across the package.

Input problems (bad shapes, invalid parameters, malformed files) raise
:class:`InputError`; failures of the numerical machinery (solvers that do not
bracket, rank-deficient matrices, exhausted jitter) raise
:class:`NumericError` or one of its subclasses.  The CLI maps the former to
exit code 2 and the latter to exit code 3.
"""

from __future__ import annotations


class ScpcError(Exception):
    """Base class for all package errors."""


class InputError(ScpcError):
    """Invalid user input: shapes, ranges, missing columns, bad flags."""


class NumericError(ScpcError):
    """A numerical routine failed (rank deficiency, non-convergence, ...)."""


class CalibrationError(NumericError):
    """The persistence parameter cannot be calibrated to the requested value."""


class SamplingError(NumericError):
    """Rejection sampling exceeded its iteration budget."""


class SolverError(NumericError):
    """A root-finder or optimizer could not bracket / converge."""


class DegenerateStatisticError(NumericError):
    """The variance estimator is exactly zero; the t-statistic is undefined."""


def stage(label: str):
    """Decorator that prefixes errors escaping ``fn`` with a pipeline stage label."""

    def deco(fn):
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except ScpcError as exc:
                if not str(exc).startswith("["):
                    exc.args = (f"[{label}] {exc}",) + exc.args[1:]
                raise

        wrapper.__name__ = fn.__name__
        wrapper.__doc__ = fn.__doc__
        return wrapper

    return deco
