"""Exception types shared across the package."""


class LpbicError(Exception):
    """Base class for all package-specific errors."""


class DegenerateComponentError(LpbicError):
    """A mixture component lost essentially all responsibility mass or
    collapsed to a singular noise term."""

    def __init__(self, component: int, reason: str):
        self.component = component
        self.reason = reason
        super().__init__(f"component {component} degenerate: {reason}")


class FitFailureError(LpbicError):
    """Every start of a fit failed; carries per-start diagnostics."""

    def __init__(self, diagnostics: list[tuple[int, str]]):
        self.diagnostics = diagnostics
        detail = "; ".join(f"start {i}: {msg}" for i, msg in diagnostics)
        super().__init__(f"all {len(diagnostics)} starts failed ({detail})")


class SearchFailureError(LpbicError):
    """Every cell of a grid search failed."""
