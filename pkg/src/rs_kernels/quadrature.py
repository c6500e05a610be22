"""Sinc-quadrature Gaussian sums for radial Green kernels.

A radial kernel p(r) with a Laplace-Gauss representation

    p(r) = int_0^inf w(t) exp(-t^2 r^2) dt

is approximated by sum_k p_k exp(-t_k^2 r^2).  The nodes come from the
substitutions t = log(1 + e^u), u = sinh(w) and a uniform step C0/sqrt(M)
in w, which gives an error decaying like exp(-beta sqrt(M)) for r >= a > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

__all__ = [
    "RadialKernel",
    "QuadratureRule",
    "newton",
    "yukawa",
    "inverse_power",
    "build_sinc_rule",
    "eval_gaussian_sum",
    "kernel_exact",
    "convergence_sweep",
    "fit_convergence_rate",
    "laplace_gauss_integral",
]

FOUR_PI_INV = 1.0 / (4.0 * math.pi)

_FAMILIES = ("newton", "yukawa", "invpow", "absr")


@dataclass(frozen=True)
class RadialKernel:
    """Radial kernel family with a final multiplicative ``scale``.

    ``family`` is one of ``newton`` (1/r), ``yukawa`` (exp(-kappa r)/r),
    ``invpow`` (1/r**beta) or ``absr`` (r, no Gaussian-sum rule).
    """

    family: str
    kappa: float = 0.0
    beta: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "yukawa" and not self.kappa > 0:
            raise ValueError("yukawa kernel needs kappa > 0")
        if self.family == "invpow" and not self.beta > 0:
            raise ValueError("inverse power kernel needs beta > 0")

    @property
    def power(self) -> float:
        return self.beta if self.family == "invpow" else 1.0

    def describe(self) -> dict:
        d = {"family": self.family, "scale": self.scale}
        if self.family == "yukawa":
            d["kappa"] = self.kappa
        if self.family == "invpow":
            d["beta"] = self.beta
        return d


def newton(scale: float = FOUR_PI_INV) -> RadialKernel:
    """Newton kernel 1/(4 pi r) (``scale=1`` gives plain 1/r)."""
    return RadialKernel("newton", scale=scale)


def yukawa(kappa: float, scale: float = FOUR_PI_INV) -> RadialKernel:
    return RadialKernel("yukawa", kappa=kappa, scale=scale)


def inverse_power(beta: float, scale: float = 1.0) -> RadialKernel:
    return RadialKernel("invpow", beta=beta, scale=scale)


@dataclass(frozen=True)
class QuadratureRule:
    """Gaussian-sum rule, terms sorted by increasing node.

    ``k`` holds the signed sinc index of each kept term (``-M..M``).  Terms
    of the flat ``k < 0`` tail whose weight underflows or falls below
    ``prune_tol`` times the ``k = 0`` weight are dropped, so ``len(nodes)``
    can be smaller than ``2M + 1``.  ``weights``
    exclude ``kernel.scale``.
    """

    kernel: RadialKernel
    M: int
    C0: float
    k: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    step: float = field(default=0.0)

    def __post_init__(self):
        for name in ("k", "nodes", "weights"):
            getattr(self, name).setflags(write=False)

    @property
    def rank(self) -> int:
        return len(self.nodes)

    @property
    def enumeration(self) -> np.ndarray:
        """Position of each term in the full ``k = -M..M`` sequence (0-based)."""
        return self.k + self.M

    @property
    def scaled_weights(self) -> np.ndarray:
        return self.kernel.scale * self.weights

    def nonnegative(self) -> "QuadratureRule":
        """Terms with ``k >= 0`` only (the half-range index set)."""
        sel = self.k >= 0
        return QuadratureRule(self.kernel, self.M, self.C0, self.k[sel].copy(),
                              self.nodes[sel].copy(), self.weights[sel].copy(), self.step)

    def __call__(self, r):
        return eval_gaussian_sum(self, r)


def _log_weight_factor(kernel: RadialKernel, t: np.ndarray) -> np.ndarray:
    """log of w(t) for the Laplace-Gauss transform of the kernel."""
    with np.errstate(divide="ignore"):
        if kernel.family == "newton":
            return np.full_like(t, math.log(2.0 / math.sqrt(math.pi)))
        if kernel.family == "yukawa":
            return math.log(2.0 / math.sqrt(math.pi)) - kernel.kappa ** 2 / (4.0 * t * t)
        beta = kernel.beta
        power = 0.0 if beta == 1.0 else (beta - 1.0) * np.log(t)
        return math.log(2.0) - gammaln(beta / 2.0) + power


def build_sinc_rule(kernel: RadialKernel, M: int, C0: float = 3.0,
                    prune_tol: float = 1e-15) -> QuadratureRule:
    """Sinc quadrature with ``w_k = k C0/sqrt(M)``, ``k = -M..M``.

    Node ``t_k = log(1 + exp(sinh w_k))`` and weight
    ``h cosh(w_k) / (1 + exp(-sinh w_k)) * w(t_k)`` where ``w`` is the
    Laplace-Gauss weight: ``2/sqrt(pi)`` for 1/r, ``2 t^(beta-1)/Gamma(beta/2)``
    for 1/r**beta and ``2/sqrt(pi) exp(-kappa^2/(4 t^2))`` for the Yukawa kernel.

    Parameters
    ----------
    kernel : RadialKernel
    M : int
        Half-width of the sinc sum, ``M >= 1``.
    C0 : float
        Step constant; ``C0 = 3`` is the usual choice.
    prune_tol : float
        Weight, relative to the ``k = 0`` term, below which ``k < 0`` terms
        are dropped (0 keeps every term with a representable weight).
    """
    if isinstance(M, bool) or int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M!r}")
    if not C0 > 0:
        raise ValueError(f"C0 must be positive, got {C0!r}")
    if kernel.family == "absr":
        raise ValueError("the |x| kernel has no Gaussian-sum quadrature; "
                         "use reference_oracles for it")
    M = int(M)
    step = C0 / math.sqrt(M)
    k = np.arange(-M, M + 1)
    w = k * step
    s = np.sinh(w)
    # log1p(exp(s)) without overflow for large s
    t = np.logaddexp(0.0, s)
    with np.errstate(divide="ignore", over="ignore", under="ignore", invalid="ignore"):
        log_base = math.log(step) + np.log(np.cosh(w)) + np.log(expit(s))
        log_p = log_base + _log_weight_factor(kernel, t)
        p = np.exp(log_p)
    keep = np.isfinite(log_p) & (t > 0) & (p > 0)
    if prune_tol > 0:
        # only the flat (k < 0) tail is pruned; large-t terms carry the singularity
        keep &= (k >= 0) | (p >= prune_tol * p[k == 0][0])
    return QuadratureRule(kernel, M, float(C0), k[keep], t[keep], p[keep], step)


def eval_gaussian_sum(rule: QuadratureRule, r):
    """``scale * sum_k p_k exp(-t_k^2 r^2)``; finite (but not the kernel) at r = 0."""
    r = np.asarray(r, dtype=float)
    e = np.exp(-np.multiply.outer(r * r, rule.nodes ** 2))
    return rule.kernel.scale * (e @ rule.weights)


def kernel_exact(kernel: RadialKernel, r):
    """Closed-form kernel value, including ``scale``."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        if kernel.family == "newton":
            v = 1.0 / r
        elif kernel.family == "yukawa":
            v = np.exp(-kernel.kappa * r) / r
        elif kernel.family == "invpow":
            v = r ** (-kernel.beta)
        else:
            v = r.copy()
    return kernel.scale * v


def laplace_gauss_integral(kernel: RadialKernel, r: float) -> float:
    """Adaptive integration of the Laplace-Gauss representation at ``r``.

    Independent of the sinc nodes; used to validate rules numerically.
    """
    from scipy.integrate import quad

    if kernel.family == "absr":
        raise ValueError("no Laplace-Gauss representation for |x|")

    def integrand(t):
        if t == 0.0:
            return 0.0 if kernel.family != "newton" else 2.0 / math.sqrt(math.pi)
        return math.exp(float(_log_weight_factor(kernel, np.array([t]))[0]) - t * t * r * r)

    scale = 1.0 / r
    pieces = [0.0, 0.25 * scale, scale, 4.0 * scale, np.inf]
    total = 0.0
    for a, b in zip(pieces[:-1], pieces[1:]):
        val, _ = quad(integrand, a, b, epsabs=0.0, epsrel=1e-13, limit=400)
        total += val
    return kernel.scale * total


def convergence_sweep(kernel: RadialKernel, Ms, r_grid, a: float, C0: float = 3.0):
    """Max relative error of the rule on ``r_grid`` (all ``>= a``) for each M.

    Returns a list of ``(M, max_rel_error)`` rows.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.size == 0:
        raise ValueError("empty r grid")
    if not a > 0:
        raise ValueError("a must be positive")
    if np.any(r_grid < a):
        raise ValueError("r grid must lie in [a, inf)")
    exact = kernel_exact(kernel, r_grid)
    rows = []
    for M in Ms:
        rule = build_sinc_rule(kernel, M, C0)
        err = np.abs(eval_gaussian_sum(rule, r_grid) - exact) / np.abs(exact)
        rows.append((int(M), float(err.max())))
    return rows


def fit_convergence_rate(rows):
    """Least-squares fit ``log err = c - beta sqrt(M)``; returns (beta, c, r2)."""
    M = np.array([m for m, _ in rows], dtype=float)
    y = np.log([e for _, e in rows])
    x = np.sqrt(M)
    slope, c = np.polyfit(x, y, 1)
    resid = y - (slope * x + c)
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid ** 2).sum() / ss_tot if ss_tot > 0 else 1.0
    return -slope, c, r2
