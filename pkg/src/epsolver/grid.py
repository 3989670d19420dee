"""Node-collocated fields on the periodic slab T^2 x (0, L3).

Directions 1 and 2 are periodic with unit period and use spectral
differentiation; direction 3 uses fourth-order finite differences with
one-sided closures at the faces x3 = 0 and x3 = L3.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import GridMismatch, StencilError

FD4_WIDTH = 5


@dataclass(frozen=True)
class SlabGrid:
    n1: int
    n2: int
    n3: int
    length3: float = 1.0

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("n1 and n2 must be >= 1")
        if self.n3 < 4:
            raise ValueError("n3 must be >= 4")
        if not self.length3 > 0:
            raise ValueError("length3 must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.n3)

    @property
    def size(self) -> int:
        return self.n1 * self.n2 * self.n3

    @property
    def h1(self) -> float:
        return 1.0 / self.n1

    @property
    def h2(self) -> float:
        return 1.0 / self.n2

    @property
    def h3(self) -> float:
        return self.length3 / (self.n3 - 1)

    @property
    def spacings(self) -> tuple[float, float, float]:
        return (self.h1, self.h2, self.h3)

    @property
    def planar(self) -> bool:
        """True when tangential variation is collapsed (n1 = n2 = 1)."""
        return self.n1 == 1 and self.n2 == 1

    @property
    def active_spacing(self) -> float:
        """Smallest spacing among directions that carry variation."""
        hs = [self.h3]
        if self.n1 > 1:
            hs.append(self.h1)
        if self.n2 > 1:
            hs.append(self.h2)
        return min(hs)

    @cached_property
    def x1(self) -> np.ndarray:
        return np.arange(self.n1) * self.h1

    @cached_property
    def x2(self) -> np.ndarray:
        return np.arange(self.n2) * self.h2

    @cached_property
    def x3(self) -> np.ndarray:
        x = np.arange(self.n3) * self.h3
        x[-1] = self.length3
        return x

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays of shapes (n1,1,1), (1,n2,1), (1,1,n3)."""
        return (
            self.x1[:, None, None],
            self.x2[None, :, None],
            self.x3[None, None, :],
        )

    def mesh(self) -> np.ndarray:
        """Full coordinate field of shape (3, n1, n2, n3)."""
        X1, X2, X3 = self.coords()
        return np.stack(np.broadcast_arrays(X1, X2, X3)).astype(float)

    @cached_property
    def weights3(self) -> np.ndarray:
        w = np.full(self.n3, self.h3)
        w[0] = w[-1] = 0.5 * self.h3
        return w

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights, shape (n1, n2, n3)."""
        w = self.h1 * self.h2 * self.weights3
        return np.broadcast_to(w, self.shape).copy()

    @property
    def volume(self) -> float:
        return self.length3

    def check_n3_for_stencil(self) -> None:
        if self.n3 < FD4_WIDTH:
            raise StencilError(f"n3 = {self.n3} is below the stencil width {FD4_WIDTH}")


class Field:
    """Immutable values on a grid; component axes come first."""

    rank = 0

    def __init__(self, grid: SlabGrid, values):
        values = np.array(values, dtype=float)
        expected = (3,) * self.rank + grid.shape
        if values.shape != expected:
            values = np.broadcast_to(values, expected).copy()
        values.flags.writeable = False
        self.grid = grid
        self.values = values

    def _check(self, other: Field) -> None:
        if not isinstance(other, Field):
            return
        if other.grid != self.grid:
            raise GridMismatch(f"grid {self.grid} does not match {other.grid}")

    def _coerce(self, other):
        if isinstance(other, Field):
            self._check(other)
            if other.rank != self.rank and other.rank != 0:
                raise GridMismatch("field ranks do not match")
            return other.values
        return other

    def _wrap(self, values):
        return type(self)(self.grid, values)

    def __add__(self, other):
        return self._wrap(self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._coerce(other))

    def __rsub__(self, other):
        return self._wrap(self._coerce(other) - self.values)

    def __mul__(self, other):
        if isinstance(other, Field) and other.rank == 0 and self.rank > 0:
            self._check(other)
            return self._wrap(self.values * other.values)
        return self._wrap(self.values * self._coerce(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, Field) and other.rank == 0 and self.rank > 0:
            self._check(other)
            return self._wrap(self.values / other.values)
        return self._wrap(self.values / self._coerce(other))

    def __neg__(self):
        return self._wrap(-self.values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __repr__(self):
        return f"{type(self).__name__}(grid={self.grid})"


class ScalarField(Field):
    rank = 0


class VectorField(Field):
    rank = 1

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.values[i])


class TensorField(Field):
    """Row index is the component i, column index the derivative direction k."""

    rank = 2


def same_grid(*fields: Field) -> SlabGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatch(f"grid {f.grid} does not match {grid}")
    return grid


# ---------------------------------------------------------------- derivatives


def _spectral_diff(a: np.ndarray, axis: int, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(a)
    ah = np.fft.rfft(a, axis=axis)
    k = 2j * np.pi * np.fft.rfftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[-1] = 0.0
    shape = [1] * a.ndim
    shape[axis] = k.size
    return np.fft.irfft(ah * k.reshape(shape), n=n, axis=axis)


def _fd4_diff(a: np.ndarray, h: float) -> np.ndarray:
    if a.shape[-1] < FD4_WIDTH:
        raise StencilError(f"n3 = {a.shape[-1]} is below the stencil width {FD4_WIDTH}")
    d = np.empty_like(a)
    d[..., 2:-2] = (a[..., :-4] - 8.0 * a[..., 1:-3] + 8.0 * a[..., 3:-1] - a[..., 4:]) / (12.0 * h)
    f0, f1, f2, f3, f4 = (a[..., j] for j in range(5))
    d[..., 0] = (-25.0 * f0 + 48.0 * f1 - 36.0 * f2 + 16.0 * f3 - 3.0 * f4) / (12.0 * h)
    d[..., 1] = (-3.0 * f0 - 10.0 * f1 + 18.0 * f2 - 6.0 * f3 + f4) / (12.0 * h)
    g0, g1, g2, g3, g4 = (a[..., -1 - j] for j in range(5))
    d[..., -1] = -(-25.0 * g0 + 48.0 * g1 - 36.0 * g2 + 16.0 * g3 - 3.0 * g4) / (12.0 * h)
    d[..., -2] = -(-3.0 * g0 - 10.0 * g1 + 18.0 * g2 - 6.0 * g3 + g4) / (12.0 * h)
    return d


def diff(a: np.ndarray, direction: int, grid: SlabGrid) -> np.ndarray:
    """Partial derivative along direction 0, 1 or 2 of the trailing grid axes."""
    if direction == 0:
        return _spectral_diff(a, a.ndim - 3, grid.n1)
    if direction == 1:
        return _spectral_diff(a, a.ndim - 2, grid.n2)
    if direction == 2:
        return _fd4_diff(a, grid.h3)
    raise ValueError(f"direction must be 0, 1 or 2, got {direction}")


def grad_array(a: np.ndarray, grid: SlabGrid) -> np.ndarray:
    """Stack of derivatives as a new trailing-component axis before the grid axes."""
    parts = [diff(a, d, grid) for d in range(3)]
    return np.stack(parts, axis=a.ndim - 3)


def gradient(f: ScalarField) -> VectorField:
    f.grid.check_n3_for_stencil()
    return VectorField(f.grid, grad_array(f.values, f.grid))


def tangential_gradient(f: ScalarField) -> VectorField:
    """Components 1 and 2 of the gradient; component 3 is zero."""
    g = f.grid
    out = np.zeros((3,) + g.shape)
    out[0] = diff(f.values, 0, g)
    out[1] = diff(f.values, 1, g)
    return VectorField(g, out)


def jacobian(v: VectorField) -> TensorField:
    """Tensor with entry [i, k] = d v^i / d x_k."""
    v.grid.check_n3_for_stencil()
    return TensorField(v.grid, grad_array(v.values, v.grid))


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    g.check_n3_for_stencil()
    return ScalarField(g, sum(diff(v.values[k], k, g) for k in range(3)))


def curl_array(v: np.ndarray, grid: SlabGrid) -> np.ndarray:
    d = lambda i, j: diff(v[i], j, grid)  # noqa: E731
    return np.stack([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)])


def curl(v: VectorField) -> VectorField:
    v.grid.check_n3_for_stencil()
    return VectorField(v.grid, curl_array(v.values, v.grid))


# ---------------------------------------------------------------- quadrature and norms


def integrate(a: np.ndarray, grid: SlabGrid) -> np.ndarray | float:
    """Trapezoid-in-x3, rectangle-in-x1,x2 integral over the trailing grid axes."""
    return np.tensordot(a, grid.weights, axes=3) if a.ndim > 3 else float(np.sum(a * grid.weights))


def face_integral(face: np.ndarray, grid: SlabGrid) -> float:
    """Integral of data given on one face, shape (n1, n2)."""
    return float(np.sum(face) * grid.h1 * grid.h2)


def _sum_sq(a: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(a.reshape((-1,) + a.shape[-3:])) ** 2, axis=0)


def l2_norm(f: Field, weight: ScalarField | np.ndarray | None = None, squared: bool = False) -> float:
    """(Integral of weight * |f|^2)^(1/2); the squared value with squared=True."""
    g = f.grid
    dens = _sum_sq(f.values)
    if weight is not None:
        w = weight.values if isinstance(weight, Field) else np.asarray(weight, dtype=float)
        if isinstance(weight, Field):
            f._check(weight)
        if np.any(w < 0):
            raise ValueError("weight must be non-negative")
        dens = dens * w
    val = float(np.sum(dens * g.weights))
    return val if squared else float(np.sqrt(val))


def multi_indices(order: int, dims: int = 3):
    """All multi-indices with |alpha| == order over the given number of directions."""
    for combo in itertools.combinations_with_replacement(range(dims), order):
        yield combo


def derivative_along(a: np.ndarray, combo, grid: SlabGrid) -> np.ndarray:
    out = a
    for d in combo:
        out = diff(out, d, grid)
    return out


def sobolev_norm(f: Field, s: int, squared: bool = False, weight=None) -> float:
    """H^s norm summing |D^alpha f|^2 over all multi-indices |alpha| <= s."""
    if not (isinstance(s, (int, np.integer)) and 0 <= s <= 4):
        raise ValueError(f"Sobolev order must be an integer in 0..4, got {s}")
    g = f.grid
    if s > 0:
        g.check_n3_for_stencil()
    w = g.weights if weight is None else g.weights * np.asarray(weight)
    total = 0.0
    for order in range(s + 1):
        for combo in multi_indices(order):
            total += float(np.sum(_sum_sq(derivative_along(f.values, combo, g)) * w))
    return total if squared else float(np.sqrt(total))


def tangential_sobolev_sq(a: np.ndarray, order: int, grid: SlabGrid, weight=None) -> float:
    """Sum over tangential multi-indices of exact order `order` of the weighted L2 square."""
    w = grid.weights if weight is None else grid.weights * np.asarray(weight)
    total = 0.0
    for combo in multi_indices(order, dims=2):
        total += float(np.sum(_sum_sq(derivative_along(a, combo, grid)) * w))
    return total


def faces(a: np.ndarray) -> np.ndarray:
    """Face traces: (..., 2, n1, n2) with index 0 the bottom and 1 the top."""
    return np.stack([a[..., 0], a[..., -1]], axis=-3)


def boundary_norm(face_values: np.ndarray, grid: SlabGrid, s: int = 0, squared: bool = False) -> float:
    """|f|_s over both faces with tangential derivatives up to order s."""
    data = np.asarray(face_values, dtype=float)
    total = 0.0
    for order in range(s + 1):
        for combo in multi_indices(order, dims=2):
            d = data
            for direction in combo:
                n = grid.n1 if direction == 0 else grid.n2
                d = _spectral_diff(d, d.ndim - 2 + direction, n)
            total += float(np.sum(np.abs(d) ** 2) * grid.h1 * grid.h2)
    return total if squared else float(np.sqrt(total))


def identity_map(grid: SlabGrid) -> VectorField:
    return VectorField(grid, grid.mesh())
