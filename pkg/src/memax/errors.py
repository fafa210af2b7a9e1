"""Exception types raised across the package.

Every failure mode that a caller can meaningfully react to gets its own
class; generic misuse (bad shapes, mismatched grids) raises ValueError.
"""


class MemaxError(Exception):
    """Base class for package-specific errors."""


class WraparoundExceeded(MemaxError):
    """A weighted signal has not decayed at the window ends.

    The windowed DFT stands in for a transform on the whole line; it is only
    trustworthy when the weighted signal is negligible at both window edges.
    """

    def __init__(self, measure: float, tolerance: float):
        self.measure = measure
        self.tolerance = tolerance
        super().__init__(
            f"weighted endpoint magnitude {measure:.3e} exceeds the declared "
            f"wraparound tolerance {tolerance:.3e}"
        )


class NonPositiveWeight(MemaxError):
    """Causal antiderivative requested with rho <= 0."""


class NonCausalKernel(MemaxError):
    """A convolution kernel carries mass at negative lags."""


class PoleHit(MemaxError):
    """A material law was evaluated too close to a pole of its denominator."""

    def __init__(self, z: complex, distance: float):
        self.z = z
        self.distance = distance
        super().__init__(f"evaluation at z={z} within {distance:.3e} of a pole")


class OverdampedUnsupported(MemaxError):
    """Time-kernel sampling requested for an overdamped oscillator term.

    The damped-sine closed form only covers omega0 > gamma; z-domain
    evaluation still works for overdamped terms.
    """


class GridTooCoarse(MemaxError):
    """An accretivity scan minimum is dominated by pole-adjacent cells."""


class BlockSingular(MemaxError):
    """A block that must be inverted is numerically singular."""

    def __init__(self, what: str, cond: float):
        self.cond = cond
        super().__init__(f"{what} is numerically singular (cond ~ {cond:.3e})")


class RankAmbiguous(MemaxError):
    """Singular values straddle the rank threshold too closely to trust."""


class FrequencySingular(MemaxError):
    """A per-frequency system solve hit a (near-)singular matrix."""

    def __init__(self, z: complex, cond: float):
        self.z = z
        self.cond = cond
        super().__init__(f"system singular at z={z} (condition estimate {cond:.3e})")


class NotAContraction(MemaxError):
    """The certified fixed-point bound is >= 1 at the requested weight."""

    def __init__(self, rho: float, bound: float, rho_suggestion: float | None = None):
        self.rho = rho
        self.bound = bound
        self.rho_suggestion = rho_suggestion
        hint = ""
        if rho_suggestion is not None:
            hint = f"; smallest certified weight is about rho={rho_suggestion:.4g}"
        super().__init__(f"contraction bound {bound:.4g} >= 1 at rho={rho}{hint}")


class MaxIterExceeded(MemaxError):
    """Fixed-point iteration did not converge within the iteration budget."""

    def __init__(self, iterations: int, residual_trace):
        self.iterations = iterations
        self.residual_trace = list(residual_trace)
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(last residual {self.residual_trace[-1]:.3e})"
        )


class BallEscape(MemaxError):
    """A ball-confined iteration left the admissible ball: data too large."""

    def __init__(self, iteration: int, norm: float, radius: float):
        self.iteration = iteration
        self.norm = norm
        self.radius = radius
        super().__init__(
            f"iterate {iteration} escaped the ball: |u| = {norm:.4g} > r = {radius:.4g}"
        )


class NotCertified(MemaxError):
    """A stability run was requested at a weight without a certificate."""

    def __init__(self, nu: float, reason: str = ""):
        self.nu = nu
        super().__init__(f"no accretivity certificate at weight -{nu}" + (f": {reason}" if reason else ""))


class KernelRankTooHigh(MemaxError):
    """A two-variable kernel exceeds the configured low-rank budget."""


class ConfigError(MemaxError):
    """A run configuration failed schema validation."""
