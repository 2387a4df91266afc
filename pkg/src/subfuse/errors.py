"""Exception types shared across the package.

All three inherit from ValueError so that callers who do not care about
the distinction can catch a single builtin type.  The CLI maps each class
to its own exit code.
"""


class ConfigError(ValueError):
    """A parameter or configuration value is out of contract."""


class DataValidationError(ValueError):
    """An input file or array violates a format or finiteness invariant."""


class DegenerateLabelsError(ValueError):
    """A label set cannot support the requested computation
    (no positives, or a single class where two are required)."""
