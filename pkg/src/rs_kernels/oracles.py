"""Closed-form reference values for Gaussian potentials and Green kernels.

Also builds range-separated grid tensors for the matrix-valued Stokes and
elasticity kernels out of the scalar pieces ``1/r`` and ``x_k x_l / r^3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .canonical import CanonicalTensor3, GridSpec, cell_moments, project_kernel
from .quadrature import build_sinc_rule, inverse_power
from .range_separation import RsSplit, balanced_split, choose_split, split_tensor

__all__ = [
    "OMEGA",
    "sphere_area",
    "erf_potential",
    "erf_potential_gradient",
    "g_d",
    "g_d_root",
    "g_d_stationary",
    "g_d_extremum",
    "AnalyticKernel",
    "green_eval",
    "MatrixKernelTensors",
    "rs_split_matrix_kernels",
]


def sphere_area(d: int) -> float:
    """Surface area ``2 pi^(d/2) / Gamma(d/2)`` of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


OMEGA = {d: sphere_area(d) for d in range(1, 7)}


def _check_lam(lam):
    if not lam > 0:
        raise ValueError("lambda must be positive")


def erf_potential(lam: float, x) -> np.ndarray:
    """Newton potential ``(1/4pi) int exp(-lam^2 |y|^2) / |x - y| dy``.

    Equals ``sqrt(pi) erf(lam r) / (4 lam^3 r)``; at ``r = 0`` the limit is
    ``1 / (2 lam^2)`` (a short Taylor series is used for tiny ``lam r``).
    ``x`` has shape ``(..., 3)``.
    """
    _check_lam(lam)
    r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    z = lam * r
    with np.errstate(divide="ignore", invalid="ignore"):
        far = math.sqrt(math.pi) * erf(z) / (4 * lam ** 3 * r)
    near = (1 - z ** 2 / 3 + z ** 4 / 10) / (2 * lam ** 2)
    return np.where(z < 1e-4, near, far)


def erf_potential_gradient(lam: float, x) -> np.ndarray:
    """Gradient ``-(x / (2 lam^2 r^2)) (sqrt(pi) erf(lam r)/(2 lam r) - exp(-lam^2 r^2))``."""
    _check_lam(lam)
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise ValueError("gradient is evaluated away from the origin")
    z = lam * r
    br = math.sqrt(math.pi) * erf(z) / (2 * z) - np.exp(-z * z)
    return -(x / (2 * lam ** 2 * r[..., None] ** 2)) * br[..., None]


def g_d(d: int, lam: float, r) -> np.ndarray:
    """``(2 d lam - 4 lam^2 r^2) exp(-lam r^2)``, which is ``-Laplace(exp(-lam |x|^2))`` in R^d."""
    if d < 1:
        raise ValueError("d must be >= 1")
    _check_lam(lam)
    r = np.asarray(r, dtype=float)
    return (2 * d * lam - 4 * lam ** 2 * r * r) * np.exp(-lam * r * r)


def g_d_root(d: int, lam: float) -> float:
    return math.sqrt(d / (2 * lam))


def g_d_stationary(d: int, lam: float) -> float:
    return math.sqrt((2 + d) / (2 * lam))


def g_d_extremum(d: int, lam: float) -> float:
    return -4 * lam * math.exp(-(2 + d) / 2)


_FAMILIES = ("newton", "yukawa", "biharmonic", "kelvin", "stokeslet", "theta", "eta0",
             "erf_potential", "gd")


@dataclass(frozen=True)
class AnalyticKernel:
    """A named analytic kernel with its parameters.

    Parameters by family: ``yukawa`` kappa; ``kelvin`` lame_lambda, lame_mu;
    ``stokeslet`` nu; ``eta0`` b (3-vector); ``erf_potential`` lam;
    ``gd`` d, lam.
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel {self.family!r}; choose from {_FAMILIES}")
        p = self.params
        if self.family == "yukawa" and not p.get("kappa", 0.0) >= 0:
            raise ValueError("kappa must be >= 0")
        if self.family == "kelvin" and not (p.get("lame_mu", 0) > 0 and p.get("lame_lambda", 0) > 0):
            raise ValueError("kelvin kernel needs lame_lambda > 0 and lame_mu > 0")
        if self.family == "stokeslet" and not p.get("nu", 0) > 0:
            raise ValueError("stokeslet needs viscosity nu > 0")
        if self.family in ("erf_potential", "gd") and not p.get("lam", 0) > 0:
            raise ValueError("lam must be positive")

    @property
    def matrix_valued(self) -> bool:
        return self.family in ("kelvin", "stokeslet")


def _kelvin_coeffs(lam, mu):
    c = (lam + mu) / (8 * math.pi * mu * (lam + 2 * mu))
    return c * (lam + 3 * mu) / (lam + mu), c


def _stokes_coeffs(nu):
    c = 1.0 / (8 * math.pi * nu)
    return c, c


def green_eval(kernel: AnalyticKernel, x):
    """Evaluate ``kernel`` at one point ``x`` (3-vector, nonzero where singular).

    Scalars for newton, yukawa, biharmonic, eta0, erf_potential and gd; a
    3-vector for theta; a symmetric 3x3 matrix for kelvin and stokeslet.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    r = float(np.linalg.norm(x))
    fam, p = kernel.family, kernel.params
    if fam == "erf_potential":
        return float(erf_potential(p["lam"], x))
    if fam == "gd":
        return float(g_d(int(p.get("d", 3)), p["lam"], r))
    if fam == "biharmonic":
        return -r / (8 * math.pi)
    if r == 0:
        raise ValueError(f"{fam} kernel is singular at the origin")
    if fam == "newton":
        return 1.0 / (4 * math.pi * r)
    if fam == "yukawa":
        return math.exp(-p.get("kappa", 0.0) * r) / (4 * math.pi * r)
    if fam == "theta":
        return x / (4 * math.pi * r ** 3)
    if fam == "eta0":
        b = np.asarray(p.get("b", np.zeros(3)), dtype=float)
        d = 3
        return math.exp(float(b @ x)) / ((d - 2) * OMEGA[d] * r ** (d - 2))
    a, c = _kelvin_coeffs(p["lame_lambda"], p["lame_mu"]) if fam == "kelvin" else _stokes_coeffs(p["nu"])
    return a * np.eye(3) / r + c * np.outer(x, x) / r ** 3


@dataclass(frozen=True, eq=False)
class MatrixKernelTensors:
    """Range-separated grid tensors for ``a delta_kl / r + c x_k x_l / r^3``.

    ``inv_r`` splits ``1/r``; ``xx[(k, l)]`` (``k <= l``) splits
    ``x_k x_l / r^3``.  Entries are cell integrals, so dividing by ``h^3``
    gives point values.
    """

    grid: GridSpec
    a: float
    c: float
    inv_r: RsSplit
    xx: dict

    def pair(self, k: int, l: int) -> RsSplit:
        return self.xx[(min(k, l), max(k, l))]

    def component(self, k: int, l: int, part: str = "full") -> CanonicalTensor3:
        """Tensor of entry ``(k, l)``; ``part`` is ``full``, ``long`` or ``short``."""
        def pick(s):
            return s.full() if part == "full" else getattr(s, part)
        t = pick(self.pair(k, l)).scale(self.c)
        if k == l:
            t = pick(self.inv_r).scale(self.a) + t
        return t

    def point_values(self, k: int, l: int, idx) -> np.ndarray:
        return self.component(k, l).entries(idx) / self.grid.h ** 3


def _xx_tensor(rule, grid, k, l):
    x = grid.centers()
    h = grid.h
    amp = np.cbrt(rule.kernel.scale * rule.weights)
    orders = [0, 0, 0]
    orders[k] += 1
    orders[l] += 1
    factors = []
    for o in orders:
        cols = [a * cell_moments(t, x, h, o) for t, a in zip(rule.nodes, amp)]
        factors.append(np.column_stack(cols))
    return CanonicalTensor3(grid, tuple(factors), np.ones(rule.rank), None, rule.enumeration)


def rs_split_matrix_kernels(grid: GridSpec, M: int = 32, C0: float = 3.0, kernel: AnalyticKernel = None,
                            sigma=None, delta: float = 1e-4, R_l=None) -> MatrixKernelTensors:
    """RS tensors of the Stokeslet (default, ``nu = 1``) or Kelvin matrix.

    ``1/r`` and ``1/r^3`` get their own sinc rules; the polynomial factors
    ``x_k x_l`` multiply the ``1/r^3`` Gaussians mode by mode through exact
    cell moments.  Each scalar component is split by ``choose_split`` when
    ``sigma`` is given, at ``R_l`` if given, else at the balanced cut.
    """
    kernel = kernel or AnalyticKernel("stokeslet", {"nu": 1.0})
    if kernel.family == "kelvin":
        a, c = _kelvin_coeffs(kernel.params["lame_lambda"], kernel.params["lame_mu"])
    elif kernel.family == "stokeslet":
        a, c = _stokes_coeffs(kernel.params["nu"])
    else:
        raise ValueError("matrix kernel must be 'kelvin' or 'stokeslet'")

    def cut(rule):
        if R_l is not None:
            return R_l
        if sigma is not None:
            return choose_split(rule, sigma, delta)
        return balanced_split(rule)


    r1 = build_sinc_rule(inverse_power(1.0), M, C0)
    r3 = build_sinc_rule(inverse_power(3.0), M, C0)
    info = {"sigma": sigma, "delta": delta, "criterion": "max"}
    inv_r = split_tensor(project_kernel(r1, grid, with_ghosts=False), cut(r1), **info)
    cut3 = cut(r3)
    xx = {(k, l): split_tensor(_xx_tensor(r3, grid, k, l), cut3, **info)
          for k in range(3) for l in range(k, 3)}
    return MatrixKernelTensors(grid, a, c, inv_r, xx)
