"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A count, size or scalar parameter is outside its admissible range."""


class InvalidDictionaryError(ValueError):
    """A matrix does not have unit-norm columns (or has the wrong shape)."""


class RankDeficiencyError(ValueError):
    """The Gram matrix of a sub-dictionary is numerically singular."""

    def __init__(self, support, min_eig):
        self.support = tuple(int(j) for j in support)
        self.min_eig = float(min_eig)
        super().__init__(
            f"singular Gram matrix on support {self.support} "
            f"(smallest eigenvalue {self.min_eig:.3e})"
        )


class BudgetExceededError(ValueError):
    """Exact support enumeration would exceed the configured budget."""


class InfeasibleRadiusError(ValueError):
    """The requested radius is outside the range where the quantity is defined."""


class ConvergenceError(RuntimeError):
    """The Lasso solver hit its sweep cap before certifying optimality."""

    def __init__(self, gap, sweeps):
        self.gap = float(gap)
        self.sweeps = int(sweeps)
        super().__init__(
            f"coordinate descent did not converge after {sweeps} sweeps "
            f"(duality gap {self.gap:.3e})"
        )


class ConfigError(ValueError):
    """A configuration file is malformed or inconsistent."""
