"""Exception types shared across the library."""


class LoraKernelsError(Exception):
    """Base class for all library-specific failures."""


class DimensionError(LoraKernelsError, ValueError):
    """Operand shapes are inconsistent or would overflow a sane size budget."""


class NonFiniteError(LoraKernelsError, ValueError):
    """A matrix contains NaN or infinite entries."""


class ScoreOverflowError(LoraKernelsError, OverflowError):
    """An attention score is too large for exp in float64."""

    def __init__(self, max_abs_score, limit):
        self.max_abs_score = max_abs_score
        self.limit = limit
        super().__init__(
            f"attention score max |entry| = {max_abs_score:.6g} exceeds the "
            f"float64 exp range limit {limit:.6g}"
        )


class SizeGuardError(LoraKernelsError, ValueError):
    """A dense code path refused to materialize an oversized intermediate."""


class NormBoundError(LoraKernelsError, ValueError):
    """A measured infinity-norm violates the bound the approximation assumes."""

    def __init__(self, name, measured, bound):
        self.name = name
        self.measured = measured
        self.bound = bound
        super().__init__(
            f"norm precondition violated: ||{name}||_inf = {measured:.6g} "
            f"exceeds the assumed bound {bound:.6g}"
        )


class ApproxBreakdownError(LoraKernelsError, ArithmeticError):
    """The polynomial softmax surrogate produced a non-positive normalizer."""


class RankInfeasibleError(LoraKernelsError, ValueError):
    """The degree demanded by the error target needs more monomials than allowed.

    This is the phase-transition mechanism: past a norm threshold the feature
    rank C(d+g, g) required for the target accuracy exceeds the sequence
    length, so the factored path stops being cheaper than the dense one.
    """

    def __init__(self, degree, rank, limit):
        self.degree = degree
        self.rank = rank
        self.limit = limit
        super().__init__(
            f"required polynomial degree {degree} needs rank C(d+g, g) = {rank}, "
            f"which exceeds the limit {limit}"
        )
