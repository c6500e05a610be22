"""Canonical and Tucker tensors on a cubic cell-centred grid.

Kernels are projected onto piecewise-constant cells: the entry for cell i is
the integral of the kernel over that cell, so every Gaussian term factorises
into three vectors of exact erf differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erf, erfc

from . import _kernels
from .quadrature import QuadratureRule

__all__ = [
    "GridSpec",
    "CanonicalTensor3",
    "TuckerTensor3",
    "CompressionError",
    "cell_integrals",
    "cell_moments",
    "project_kernel",
    "reference_tensor",
    "shift_window",
    "compress_can_tuck_can",
    "als_canonical",
    "dense_cp",
    "cp_norm2",
    "tensor_metadata",
    "dump_factors",
    "load_factors",
]

log = logging.getLogger(__name__)

_T_ZERO = 1e-10
_EST_FLOOR = 10.0


@dataclass(frozen=True)
class GridSpec:
    """``n**3`` cells of width ``h = 2b/n`` covering ``[-b, b]**3``.

    Cell centres are ``x_i = -b + (i + 1/2) h`` for ``i = 0..n-1``; for odd
    ``n`` the middle cell is centred at the origin.
    """

    b: float
    n: int

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError(f"box half-width must be positive, got {self.b}")
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "b", float(self.b))

    @property
    def h(self) -> float:
        return 2.0 * self.b / self.n

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    def centers(self) -> np.ndarray:
        return -self.b + (np.arange(self.n) + 0.5) * self.h

    def extended_centers(self) -> np.ndarray:
        """Centres including one ghost cell on each side (length ``n + 2``)."""
        return -self.b + (np.arange(-1, self.n + 1) + 0.5) * self.h

    def nearest_index(self, x) -> np.ndarray:
        """Index of the cell whose centre is nearest to each point (clipped)."""
        x = np.asarray(x, dtype=float)
        i = np.rint((x + self.b) / self.h - 0.5).astype(np.int64)
        return np.clip(i, 0, self.n - 1)

    def point(self, idx) -> np.ndarray:
        return self.centers()[np.asarray(idx)]

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all(np.abs(x) <= self.b, axis=-1)

    def double(self) -> "GridSpec":
        """Reference grid with ``2n + 1`` cells of the same width, centred on a cell at 0."""
        m = 2 * self.n + 1
        return GridSpec(b=0.5 * m * self.h, n=m)

    def describe(self) -> dict:
        return {"n": self.n, "b": self.b, "h": self.h}


def cell_integrals(t: float, x: np.ndarray, h: float) -> np.ndarray:
    """Integral of ``exp(-t^2 s^2)`` over ``[x - h/2, x + h/2]`` for every centre ``x``.

    Uses erfc differences on the side away from zero so large ``t x`` does
    not cancel; ``t < 1e-10`` falls back to the constant limit ``h``.
    """
    x = np.asarray(x, dtype=float)
    if t < _T_ZERO:
        return np.full(x.shape, h)
    a = t * (x + 0.5 * h)
    b = t * (x - 0.5 * h)
    out = np.empty(x.shape)
    pos = b >= 0
    neg = a <= 0
    mid = ~(pos | neg)
    out[pos] = erfc(b[pos]) - erfc(a[pos])
    out[neg] = erfc(-a[neg]) - erfc(-b[neg])
    out[mid] = erf(a[mid]) - erf(b[mid])
    return (math.sqrt(math.pi) / (2.0 * t)) * out


def cell_moments(t: float, x: np.ndarray, h: float, order: int) -> np.ndarray:
    """Integral of ``s**order * exp(-t^2 s^2)`` over each cell, ``order`` in {0, 1, 2}."""
    x = np.asarray(x, dtype=float)
    lo, hi = x - 0.5 * h, x + 0.5 * h
    if order == 0:
        return cell_integrals(t, x, h)
    if t < _T_ZERO:
        return (hi ** (order + 1) - lo ** (order + 1)) / (order + 1)
    t2 = t * t
    if order == 1:
        return (np.exp(-t2 * lo * lo) - np.exp(-t2 * hi * hi)) / (2.0 * t2)
    if order == 2:
        # int s^2 e^{-t^2 s^2} = (1/(2 t^2)) [ int e^{-t^2 s^2} - s e^{-t^2 s^2} ]
        base = cell_integrals(t, x, h)
        edge = hi * np.exp(-t2 * hi * hi) - lo * np.exp(-t2 * lo * lo)
        return (base - edge) / (2.0 * t2)
    raise ValueError("order must be 0, 1 or 2")


@dataclass(frozen=True, eq=False)
class CanonicalTensor3:
    """Rank-R tensor ``sum_r w_r U1[:, r] (x) U2[:, r] (x) U3[:, r]``.

    ``ghosts`` optionally holds the factor values in the cells just outside
    the grid (row 0 below index 0, row 1 above index n-1); the free-space
    Laplacian needs them.  ``labels`` tags columns with their quadrature
    enumeration index so range splits can select them.
    """

    grid: GridSpec
    factors: tuple
    weights: np.ndarray = None
    ghosts: tuple = None
    labels: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        factors = tuple(np.asarray(U, dtype=float) for U in self.factors)
        if len(factors) != 3:
            raise ValueError("need exactly three factor matrices")
        n = self.grid.n
        R = factors[0].shape[1] if factors[0].ndim == 2 else 0
        for U in factors:
            if U.ndim != 2 or U.shape != (n, R):
                raise ValueError(f"factor shape {U.shape} does not match ({n}, {R})")
        w = np.ones(R) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (R,):
            raise ValueError("weights length must equal the rank")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "weights", w)
        if self.ghosts is not None:
            g = tuple(np.asarray(G, dtype=float) for G in self.ghosts)
            if len(g) != 3 or any(G.shape != (2, R) for G in g):
                raise ValueError("ghosts must be three (2, R) arrays")
            object.__setattr__(self, "ghosts", g)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (R,):
                raise ValueError("labels length must equal the rank")
            object.__setattr__(self, "labels", lab)

    # -- construction helpers
    @classmethod
    def zeros(cls, grid: GridSpec, with_ghosts=False) -> "CanonicalTensor3":
        e = np.zeros((grid.n, 0))
        g = tuple(np.zeros((2, 0)) for _ in range(3)) if with_ghosts else None
        return cls(grid, (e, e, e), np.zeros(0), g, np.zeros(0, dtype=np.int64))

    @classmethod
    def random(cls, grid: GridSpec, rank: int, rng=None) -> "CanonicalTensor3":
        rng = np.random.default_rng(rng)
        f = tuple(rng.standard_normal((grid.n, rank)) for _ in range(3))
        return cls(grid, f, rng.standard_normal(rank))

    # -- basic properties
    @property
    def rank(self) -> int:
        return self.weights.shape[0]

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def column_labels(self) -> np.ndarray:
        return np.arange(self.rank) if self.labels is None else self.labels

    def extended_factors(self):
        """Factor matrices with ghost rows attached, shape ``(n + 2, R)``."""
        if self.ghosts is None:
            raise ValueError("tensor carries no ghost cells")
        return tuple(np.vstack([G[:1], U, G[1:]]) for U, G in zip(self.factors, self.ghosts))

    # -- evaluation
    def entry(self, i) -> float:
        i = tuple(int(v) for v in i)
        if len(i) != 3 or any(not 0 <= v < self.n for v in i):
            raise IndexError(f"index {i} outside 0..{self.n - 1}")
        U1, U2, U3 = self.factors
        return float(np.sum(self.weights * U1[i[0]] * U2[i[1]] * U3[i[2]]))

    def entries(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexError("index outside the grid")
        if self.rank == 0:
            return np.zeros(len(idx))
        return _kernels.cp_gather(*self.factors, self.weights, idx)

    def dense(self) -> np.ndarray:
        """Full ``n**3`` array (oracle tests and moderate grids only)."""
        return dense_cp(self.factors, self.weights)

    def line(self, axis: int = 0, at=None) -> np.ndarray:
        """Values along one grid line through index ``at`` (default: middle cell)."""
        c = self.n // 2 if at is None else at
        at3 = [c, c, c] if np.isscalar(c) else list(c)
        prod = np.ones((self.n, self.rank))
        for m, U in enumerate(self.factors):
            prod = prod * (U if m == axis else U[at3[m]])
        return prod @ self.weights

    # -- algebra
    def _check_grid(self, other):
        if other.grid != self.grid:
            raise ValueError(f"grid mismatch: {self.grid} vs {other.grid}")

    def __add__(self, other: "CanonicalTensor3") -> "CanonicalTensor3":
        self._check_grid(other)
        f = tuple(np.hstack([a, b]) for a, b in zip(self.factors, other.factors))
        g = None
        if self.ghosts is not None and other.ghosts is not None:
            g = tuple(np.hstack([a, b]) for a, b in zip(self.ghosts, other.ghosts))
        lab = None
        if self.labels is not None and other.labels is not None:
            lab = np.concatenate([self.labels, other.labels])
        return CanonicalTensor3(self.grid, f, np.concatenate([self.weights, other.weights]), g, lab)

    def scale(self, c: float) -> "CanonicalTensor3":
        return replace(self, weights=c * self.weights)

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def take(self, cols) -> "CanonicalTensor3":
        """Sub-tensor made of the selected columns (no arithmetic on values)."""
        cols = np.asarray(cols)
        f = tuple(U[:, cols] for U in self.factors)
        g = None if self.ghosts is None else tuple(G[:, cols] for G in self.ghosts)
        lab = None if self.labels is None else self.labels[cols]
        return CanonicalTensor3(self.grid, f, self.weights[cols], g, lab, dict(self.meta))

    def inner(self, other: "CanonicalTensor3") -> float:
        """Frobenius inner product via factor Gram matrices."""
        self._check_grid(other)
        G = np.ones((self.rank, other.rank))
        for A, B in zip(self.factors, other.factors):
            G *= A.T @ B
        return float(self.weights @ G @ other.weights)

    def norm(self) -> float:
        return math.sqrt(max(cp_norm2(self.factors, self.weights), 0.0))

    def storage(self) -> int:
        return 3 * self.n * self.rank + self.rank


def dense_cp(factors, weights) -> np.ndarray:
    U1, U2, U3 = factors
    if U1.shape[1] == 0:
        return np.zeros((U1.shape[0], U2.shape[0], U3.shape[0]))
    return _kernels.cp_dense(U1, U2, U3, weights)


@dataclass(frozen=True, eq=False)
class TuckerTensor3:
    """Orthonormal bases ``V[l]`` (``n x r_l``) contracted with a dense core."""

    grid: GridSpec
    bases: tuple
    core: np.ndarray
    ghosts: tuple = None

    @property
    def ranks(self):
        return tuple(int(s) for s in self.core.shape)

    def dense(self) -> np.ndarray:
        V1, V2, V3 = self.bases
        return np.einsum("abc,ia,jb,kc->ijk", self.core, V1, V2, V3, optimize=True)

    def norm(self) -> float:
        return float(np.linalg.norm(self.core))

    def storage(self) -> int:
        return int(self.core.size + sum(V.size for V in self.bases))


class CompressionError(RuntimeError):
    """Canonical re-expansion failed to reach the requested accuracy."""

    def __init__(self, message, best_residual):
        super().__init__(f"{message} (best relative residual {best_residual:.3e})")
        self.best_residual = best_residual


# ---------------------------------------------------------------- projection

def project_kernel(rule: QuadratureRule, grid: GridSpec, with_ghosts: bool = True) -> CanonicalTensor3:
    """Galerkin projection of the Gaussian-sum kernel centred at the origin.

    Column ``k`` of each factor is ``(scale p_k)^(1/3)`` times the cell
    integrals of ``exp(-t_k^2 x^2)``; the three factor matrices coincide.
    """
    x = grid.extended_centers()
    amp = np.cbrt(rule.kernel.scale * rule.weights)
    cols = [a * cell_integrals(t, x, grid.h) for t, a in zip(rule.nodes, amp)]
    ext = np.column_stack(cols) if cols else np.zeros((grid.n + 2, 0))
    ext.setflags(write=False)
    U = ext[1:-1]
    ghosts = None
    if with_ghosts:
        G = ext[[0, -1]]
        ghosts = (G, G, G)
    meta = {"kernel": rule.kernel.describe(), "M": rule.M, "C0": rule.C0,
            "nodes": np.asarray(rule.nodes)}
    return CanonicalTensor3(grid, (U, U, U), np.ones(rule.rank), ghosts, rule.enumeration, meta)


def reference_tensor(rule: QuadratureRule, grid: GridSpec) -> CanonicalTensor3:
    """Kernel projected on the ``2n + 1`` reference grid of ``grid`` (same ``h``)."""
    return project_kernel(rule, grid.double())


def shift_window(ref: CanonicalTensor3, center, target: GridSpec) -> CanonicalTensor3:
    """Cut the ``n``-window of a reference tensor so its centre lands on cell ``center``.

    ``ref`` must live on ``target.double()``.
    """
    if ref.grid != target.double():
        raise ValueError("reference tensor must live on the double grid of the target")
    center = np.asarray(center, dtype=np.int64).reshape(3)
    n = target.n
    if np.any(center < 0) or np.any(center >= n):
        raise ValueError(f"center {center.tolist()} outside target grid 0..{n - 1}")
    factors, ghosts = [], []
    for U, c in zip(ref.factors, center):
        start = n - c
        factors.append(U[start:start + n])
        ghosts.append(U[[start - 1, start + n]])
    return CanonicalTensor3(target, tuple(factors), ref.weights.copy(), tuple(ghosts),
                            None if ref.labels is None else ref.labels.copy(), dict(ref.meta))


# ---------------------------------------------------------------- compression

def _unfold(X, mode):
    return np.moveaxis(X, mode, 0).reshape(X.shape[mode], -1)


def _rhosvd(factors, weights, eps_side):
    """Orthonormal bases from truncated SVDs of weighted side matrices."""
    amp = np.cbrt(np.abs(weights))
    bases = []
    for U in factors:
        C = U * amp
        Q, s, _ = np.linalg.svd(C, full_matrices=False)
        if s.size == 0 or s[0] == 0:
            bases.append(Q[:, :1])
            continue
        r = max(1, int(np.sum(s > eps_side * s[0])))
        bases.append(Q[:, :r])
    return bases


def _project_core(factors, weights, bases):
    proj = [V.T @ U for V, U in zip(bases, factors)]
    return dense_cp(proj, weights)


def _hosvd_truncate(core, budget):
    """Truncate a dense core so the squared discarded energy stays within ``budget**2``."""
    Qs = []
    per_mode = budget ** 2 / 3.0
    for mode in range(3):
        Q, s, _ = np.linalg.svd(_unfold(core, mode), full_matrices=False)
        tail = np.cumsum((s ** 2)[::-1])[::-1]  # tail[j] = sum_{i >= j} s_i^2
        r = len(s)
        while r > 1 and tail[r - 1] <= per_mode:
            r -= 1
        Qs.append(Q[:, :r])
    new_core = core
    for mode, Q in enumerate(Qs):
        new_core = np.moveaxis(np.tensordot(Q.T, np.moveaxis(new_core, mode, 0), axes=1), 0, mode)
    return new_core, Qs


def _slice_svd_cp(core, tol):
    """Canonical form of a small core through SVDs of its slices along one mode."""
    best = None
    norm2 = float(np.sum(core ** 2))
    for mode in range(3):
        X = np.moveaxis(core, mode, 2)
        terms = []
        for k in range(X.shape[2]):
            u, s, vt = np.linalg.svd(X[:, :, k], full_matrices=False)
            for j in range(len(s)):
                terms.append((s[j], k, u[:, j], vt[j]))
        terms.sort(key=lambda z: -z[0])
        energy = np.array([z[0] ** 2 for z in terms])
        tail = np.cumsum(energy[::-1])[::-1]
        r = len(terms)
        while r > 1 and tail[r - 1] <= tol ** 2 * norm2:
            r -= 1
        if best is None or r < best[0]:
            best = (r, mode, terms[:r])
    r, mode, terms = best
    A = np.column_stack([z[2] for z in terms])
    B = np.column_stack([z[3] for z in terms])
    C = np.zeros((core.shape[mode], r))
    for j, z in enumerate(terms):
        C[z[1], j] = 1.0
    lam = np.array([z[0] for z in terms])
    # mode order of X was (others..., mode)
    others = [m for m in range(3) if m != mode]
    mats = [None, None, None]
    mats[others[0]], mats[others[1]], mats[mode] = A, B, C
    return mats, lam


def _cp_residual(core, mats, lam):
    return float(np.linalg.norm(core - dense_cp(mats, lam)))


def als_canonical(core, rank, init=None, tol=1e-4, max_iter=200, rng=None):
    """Fit a rank-``rank`` CP model to a small dense tensor by alternating least squares.

    Returns ``(mats, lam, rel_residual, converged)``.  ``init`` is a tuple of
    three factor matrices; otherwise random orthonormal columns from ``rng``.
    """
    rng = np.random.default_rng(rng)
    gnorm = float(np.linalg.norm(core))
    if gnorm == 0:
        return [np.zeros((s, rank)) for s in core.shape], np.zeros(rank), 0.0, True
    if init is None:
        mats = []
        for s in core.shape:
            Q, _ = np.linalg.qr(rng.standard_normal((s, max(s, rank))))
            mats.append(Q[:, :rank] if Q.shape[1] >= rank else
                        np.hstack([Q, rng.standard_normal((s, rank - Q.shape[1]))]))
    else:
        mats = [np.array(A, dtype=float) for A in init]
    unf = [_unfold(core, m) for m in range(3)]
    lam = np.ones(rank)
    best = (np.inf, None, None)
    prev = np.inf
    for _ in range(max_iter):
        for m in range(3):
            a, b = [i for i in range(3) if i != m]
            # unfolding column order: index of mode a varies slowest
            kr = (mats[a][:, None, :] * mats[b][None, :, :]).reshape(-1, rank)
            gram = (mats[a].T @ mats[a]) * (mats[b].T @ mats[b])
            rhs = unf[m] @ kr
            try:
                sol = np.linalg.solve(gram, rhs.T).T
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(gram, rhs.T, rcond=None)[0].T
            lam = np.linalg.norm(sol, axis=0)
            lam[lam == 0] = 1.0
            mats[m] = sol / lam
        # |X - Y|^2 = |X|^2 - 2 <X, Y> + |Y|^2 from the last mode's Gram data;
        # it cancels badly near convergence, so confirm small values exactly
        inner = float(np.sum(lam * np.sum(mats[m] * rhs, axis=0)))
        model2 = float(lam @ (gram * (mats[m].T @ mats[m])) @ lam)
        est = math.sqrt(max(gnorm ** 2 - 2 * inner + model2, 0.0)) / gnorm
        res = est if est > _EST_FLOOR * tol + 1e-6 else _cp_residual(core, mats, lam) / gnorm
        if res < best[0]:
            best = (res, [M.copy() for M in mats], lam.copy())
        if res <= tol:
            return best[1], best[2], res, True
        if prev - res < 1e-12 * max(prev, 1.0):
            break
        prev = res
    return best[1], best[2], best[0], False


def compress_can_tuck_can(t: CanonicalTensor3, eps: float, *, to_canonical=True, max_rank=None,
                          max_iter=200, als_rank_cap=256, rng=0):
    """Canonical -> Tucker -> canonical rank reduction with relative accuracy ``eps``.

    Stage 1 builds orthonormal bases from SVDs of the (weighted) side
    matrices, projects to a core and trims it by HOSVD so the Tucker model
    is within ``eps/2`` of the input in the Frobenius norm.  Stage 2 writes
    the core as a sum of slice SVD terms (always within ``eps/2``) and then
    searches, by ALS, for the smallest rank that still meets ``eps``.

    Ghost rows, when present, are compressed together with the grid rows.

    Returns
    -------
    (TuckerTensor3, CanonicalTensor3 or None, report dict)
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if t.rank < 1:
        raise ValueError("cannot compress a rank-0 tensor")
    has_ghosts = t.ghosts is not None
    factors = t.extended_factors() if has_ghosts else t.factors
    total2 = max(cp_norm2(factors, t.weights), 0.0)
    total = math.sqrt(total2)
    report = {"input_rank": t.rank, "input_norm": total}
    if total == 0:
        bases = [np.zeros((U.shape[0], 1)) for U in factors]
        for V in bases:
            V[0, 0] = 1.0
        core = np.zeros((1, 1, 1))
    else:
        eps_side = eps / 10.0
        for _ in range(6):
            bases = _rhosvd(factors, t.weights, eps_side)
            core = _project_core(factors, t.weights, bases)
            err2 = total2 - float(np.sum(core ** 2))
            if err2 <= (0.5 * eps * total) ** 2:
                break
            eps_side /= 10.0
        report["projection_error"] = math.sqrt(max(err2, 0.0)) / total
        core, Qs = _hosvd_truncate(core, 0.5 * eps * total)
        bases = [V @ Q for V, Q in zip(bases, Qs)]
    tuck_bases = tuple(V[1:-1] for V in bases) if has_ghosts else tuple(bases)
    tuck_ghosts = tuple(V[[0, -1]] for V in bases) if has_ghosts else None
    tucker = TuckerTensor3(t.grid, tuck_bases, core, tuck_ghosts)
    report["tucker_ranks"] = list(tucker.ranks)
    if not to_canonical:
        return tucker, None, report

    gnorm = float(np.linalg.norm(core))
    if gnorm == 0:
        cp = CanonicalTensor3.zeros(t.grid, with_ghosts=has_ghosts)
        report["canonical_rank"] = 0
        return tucker, cp, report
    target = eps * total / gnorm
    # two exact-enough starting points: slice SVDs of the core, or the input
    # itself projected on the bases; keep whichever has fewer terms
    mats, lam = _slice_svd_cp(core, 0.5 * target)
    proj = [V.T @ U for V, U in zip(bases, factors)]
    pnorm = np.prod([np.linalg.norm(P, axis=0) for P in proj], axis=0)
    live = (pnorm > 0) & (t.weights != 0)
    if np.count_nonzero(live) < len(lam):
        mats = [P[:, live] / np.linalg.norm(P[:, live], axis=0) for P in proj]
        lam = t.weights[live] * pnorm[live]
    best_rank = len(lam)
    lo = max(core.shape)
    hi = best_rank if max_rank is None else min(best_rank, max_rank)
    if max_rank is not None and max_rank < best_rank and max_rank < lo:
        raise CompressionError(f"max_rank {max_rank} below the Tucker rank bound {lo}", 1.0)
    chosen = (mats, lam)
    best_res = _cp_residual(core, mats, lam) / gnorm
    als_used = False
    order = np.argsort(-np.abs(lam))
    if hi < best_rank:
        # explicit cap below the direct rank: ALS must reach the target there
        init = [M[:, order[:hi]] for M in mats]
        m2, l2, res, ok = als_canonical(core, hi, init, target, max_iter, rng)
        if not ok:
            raise CompressionError(f"ALS did not reach eps at rank {hi} in {max_iter} sweeps",
                                   res * gnorm / total)
        chosen, best_res, als_used = (m2, l2), res, True
        best_rank = hi
    elif lo < best_rank <= als_rank_cap:
        left, right = lo, best_rank - 1
        while left <= right:
            mid = (left + right) // 2
            init = [M[:, order[:mid]] for M in mats]
            m2, l2, res, ok = als_canonical(core, mid, init, target, max_iter, rng)
            if ok:
                chosen, best_res, best_rank, als_used = (m2, l2), res, mid, True
                right = mid - 1
            else:
                left = mid + 1
    mats, lam = chosen
    lifted = [V @ A for V, A in zip(bases, mats)]
    if has_ghosts:
        f = tuple(L[1:-1] for L in lifted)
        g = tuple(L[[0, -1]] for L in lifted)
    else:
        f, g = tuple(lifted), None
    cp = CanonicalTensor3(t.grid, f, np.asarray(lam, dtype=float), g, None, dict(t.meta))
    report.update(canonical_rank=cp.rank, core_residual=best_res, als_used=als_used)
    log.debug("can-tuck-can: rank %d -> tucker %s -> canonical %d", t.rank, tucker.ranks, cp.rank)
    return tucker, cp, report


def cp_norm2(factors, weights, block: int = 512) -> float:
    """Squared Frobenius norm from Gram matrices, in column blocks to bound memory."""
    R = len(weights)
    total = 0.0
    for a in range(0, R, block):
        sl = slice(a, min(a + block, R))
        G = np.ones((sl.stop - a, R))
        for U in factors:
            G *= U[:, sl].T @ U
        total += float(weights[sl] @ G @ weights)
    return total


def tensor_metadata(t: CanonicalTensor3) -> dict:
    """JSON-ready description of a projected tensor."""
    meta = {"n": t.grid.n, "b": t.grid.b, "h": t.grid.h, "R": t.rank}
    for key in ("kernel", "M", "C0"):
        if key in t.meta:
            meta[key] = t.meta[key]
    return meta


def dump_factors(t: CanonicalTensor3, prefix) -> list:
    """Write each factor matrix to ``<prefix>_mode<l>.csv`` (one column per rank term).

    The first line is a comment header ``# n=<n> R=<R> b=<b>``; the weights
    go to ``<prefix>_weights.csv``.  Returns the written paths.
    """
    from pathlib import Path

    prefix = Path(prefix)
    header = f"n={t.grid.n} R={t.rank} b={t.grid.b!r}"
    paths = []
    for m, U in enumerate(t.factors, 1):
        p = prefix.with_name(f"{prefix.name}_mode{m}.csv")
        np.savetxt(p, U, delimiter=",", header=header, fmt="%.17g")
        paths.append(p)
    p = prefix.with_name(f"{prefix.name}_weights.csv")
    np.savetxt(p, t.weights[None, :], delimiter=",", header=header, fmt="%.17g")
    paths.append(p)
    return paths


def load_factors(prefix, b: float) -> CanonicalTensor3:
    """Inverse of :func:`dump_factors`."""
    from pathlib import Path

    prefix = Path(prefix)
    f = tuple(np.loadtxt(prefix.with_name(f"{prefix.name}_mode{m}.csv"), delimiter=",", ndmin=2)
              for m in (1, 2, 3))
    w = np.loadtxt(prefix.with_name(f"{prefix.name}_weights.csv"), delimiter=",", ndmin=1)
    return CanonicalTensor3(GridSpec(b, f[0].shape[0]), f, np.atleast_1d(w))
