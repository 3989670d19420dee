"""Exception types raised across the solver."""


class GridMismatch(ValueError):
    """Two fields that must share a grid do not."""


class StencilError(ValueError):
    """The grid is too coarse in x3 for the finite-difference stencil."""


class InvertibilityLost(RuntimeError):
    """The deformation gradient has J <= 0 somewhere."""

    def __init__(self, node: tuple[int, int, int], value: float):
        self.node = node
        self.value = value
        super().__init__(f"J = {value:.6g} <= 0 at node {node}")


class OracleDiverged(RuntimeError):
    """Adaptive quadrature failed to reach its tolerance."""


class CompatibilityDefect(ValueError):
    """Div/trace data are inconsistent beyond tolerance."""

    def __init__(self, shift: float, tol: float):
        self.shift = shift
        self.tol = tol
        super().__init__(f"compatibility shift {shift:.3e} exceeds tolerance {tol:.3e}")


class SmoothingBrokeVacuum(RuntimeError):
    """The smoothed density no longer satisfies the physical vacuum check."""


class ConfigError(ValueError):
    """Malformed scenario configuration."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class StageError(RuntimeError):
    """Sub-solver failure tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class CoercivityViolation(ValueError):
    """The diffusion tensor falls below the coercivity floor at some node."""

    def __init__(self, min_eig: float, floor: float):
        self.min_eig = min_eig
        self.floor = floor
        super().__init__(f"coercivity {min_eig:.6g} below {floor:.6g}")


class MassMatrixDegenerate(ValueError):
    """The weighted Galerkin mass matrix is too ill-conditioned to factor."""

    def __init__(self, index: int, diagonal: float):
        self.index = index
        self.diagonal = diagonal
        super().__init__(f"mass matrix diagonal {index} = {diagonal:.3e} is degenerate")
