"""Manufactured test problems and discrete error norms.

Both cases use T = 4 and exact solutions
y = cos(pi t) * prod sin(pi x_k),  p = sin(pi t) * prod sin(pi x_k),
so the terminal condition p(., T) = 0 holds exactly.  The source and
target terms are the closed forms obtained by substituting (y, p) into
-dy/dt + Lap y - p/gamma = f and dp/dt + Lap p + y = g.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .discretize import ProblemSpec
from .errors import DimensionMismatchError

__all__ = ["ManufacturedCase", "example1", "example2", "by_name",
           "exact_vector", "error_norms"]


@dataclass(frozen=True)
class ManufacturedCase:
    name: str
    dim: int
    T: float
    gamma: float
    exact_y: Callable
    exact_p: Callable
    f: Callable
    g: Callable
    y0: Callable

    def problem_spec(self):
        return ProblemSpec(
            dim=self.dim,
            T=self.T,
            gamma=self.gamma,
            f=self.f,
            g=self.g,
            y0=self.y0,
            exact=(self.exact_y, self.exact_p),
        )


def example1(gamma=1e-2):
    """1D tracking problem on (0,1), T=4; gamma is the control weight."""
    pi = np.pi

    def exact_y(x, t):
        return np.cos(pi * t) * np.sin(pi * x[:, 0])

    def exact_p(x, t):
        return np.sin(pi * t) * np.sin(pi * x[:, 0])

    def f(x, t):
        sx = np.sin(pi * x[:, 0])
        return (pi * np.sin(pi * t) - pi**2 * np.cos(pi * t)
                - np.sin(pi * t) / gamma) * sx

    def g(x, t):
        sx = np.sin(pi * x[:, 0])
        return (pi * np.cos(pi * t) - pi**2 * np.sin(pi * t)
                + np.cos(pi * t)) * sx

    def y0(x):
        return np.sin(pi * x[:, 0])

    return ManufacturedCase("example1", 1, 4.0, gamma,
                            exact_y, exact_p, f, g, y0)


def example2(gamma=1e-2):
    """2D tracking problem on (0,1)^2, T=4; Lap y = -2 pi^2 y spatially."""
    pi = np.pi

    def shape(x):
        return np.sin(pi * x[:, 0]) * np.sin(pi * x[:, 1])

    def exact_y(x, t):
        return np.cos(pi * t) * shape(x)

    def exact_p(x, t):
        return np.sin(pi * t) * shape(x)

    def f(x, t):
        return (pi * np.sin(pi * t) - 2 * pi**2 * np.cos(pi * t)
                - np.sin(pi * t) / gamma) * shape(x)

    def g(x, t):
        return (pi * np.cos(pi * t) - 2 * pi**2 * np.sin(pi * t)
                + np.cos(pi * t)) * shape(x)

    def y0(x):
        return shape(x)

    return ManufacturedCase("example2", 2, 4.0, gamma,
                            exact_y, exact_p, f, g, y0)


_CASES = {"example1": example1, "example2": example2}


def by_name(name, gamma=1e-2):
    try:
        return _CASES[name](gamma)
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(_CASES)}")


def exact_vector(case, grid):
    """Exact (y, p) sampled at the unknown grid points, in solver ordering."""
    pts = grid.interior_points()
    nt, S = grid.n_steps, grid.interior_count
    w = np.empty(2 * nt * S)
    half = nt * S
    for r, t in enumerate(grid.times()):
        w[r * S : (r + 1) * S] = case.exact_y(pts, t)
        w[half + r * S : half + (r + 1) * S] = case.exact_p(pts, t)
    return w


def error_norms(case, grid, w):
    """Discrete max-norm errors (err_y, err_p) of an iterate against the exact solution."""
    w = np.asarray(w, dtype=float)
    half = grid.n_steps * grid.interior_count
    if w.shape[0] != 2 * half:
        raise DimensionMismatchError(
            f"iterate length {w.shape[0]} != expected {2 * half}"
        )
    exact = exact_vector(case, grid)
    err = np.abs(w - exact)
    return float(err[:half].max()), float(err[half:].max())
