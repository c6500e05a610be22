"""Short/long range splitting of Gaussian-sum kernels and N-particle assembly.

Terms of a rule are ordered by increasing node ``t_k``.  Narrow Gaussians
(large ``t_k``) form the short-range part, wide ones the long-range part.
Columns of projected tensors carry their enumeration index ``j = k + M``
as a label, and a split at ``R_l`` keeps the columns with ``j <= R_l`` in
the long-range part.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from . import _kernels
from .canonical import (CanonicalTensor3, GridSpec, TuckerTensor3, compress_can_tuck_can,
                        project_kernel, shift_window)
from .quadrature import QuadratureRule

__all__ = [
    "SplitWarning",
    "RsSplit",
    "ParticleSystem",
    "RsCanonicalTensor",
    "ball_gaussian_integral",
    "criterion_values",
    "choose_split",
    "balanced_split",
    "split_tensor",
    "split_kernel",
    "assemble_multiparticle",
    "rs_entry",
    "short_window",
    "support_radius_for",
]

log = logging.getLogger(__name__)

CRITERIA = ("max", "l1")


class SplitWarning(RuntimeWarning):
    """No quadrature term meets the short-range criterion."""


def ball_gaussian_integral(t, sigma: float):
    """Integral of ``exp(-t^2 |x|^2)`` over the ball of radius ``sigma`` in 3D.

    ``(2 pi/t^2) (sqrt(pi) erf(t sigma)/(2t) - sigma exp(-t^2 sigma^2))``, with
    the small-``t`` limit ``4 pi sigma^3 / 3``.
    """
    t = np.asarray(t, dtype=float)
    ts = t * sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        big = (2 * np.pi / t ** 2) * (np.sqrt(np.pi) * erf(ts) / (2 * t) - sigma * np.exp(-ts ** 2))
    # series 4 pi sigma^3 (1/3 - (t s)^2/5 + (t s)^4/14) avoids cancellation
    small = 4 * np.pi * sigma ** 3 * (1 / 3 - ts ** 2 / 5 + ts ** 4 / 14)
    return np.where(ts < 1e-2, small, big)


def criterion_values(rule: QuadratureRule, sigma: float, criterion: str = "max") -> np.ndarray:
    """Per-term size outside (max) or inside (l1) the ball of radius ``sigma``.

    ``max``: ``a_k exp(-t_k^2 sigma^2)``; ``l1``: ``a_k`` times the ball
    integral.  Amplitudes ``a_k`` are the rule weights without kernel scale.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    if criterion == "max":
        return rule.weights * np.exp(-(rule.nodes * sigma) ** 2)
    return rule.weights * ball_gaussian_integral(rule.nodes, sigma)


def choose_split(rule: QuadratureRule, sigma: float, delta: float, criterion: str = "max") -> int:
    """Long-range cut ``R_l`` for effective support ``sigma`` and threshold ``delta``.

    The short-range set is the longest run of terms, counted down from the
    largest node, whose criterion value is ``<= delta``.  ``R_l`` is the
    enumeration index of the last long-range term, so ``-1`` means no
    long-range part.  If no term qualifies every term is long-range and a
    :class:`SplitWarning` is issued.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not 0 < delta < 1 and delta != 1:
        raise ValueError("delta must lie in (0, 1]")
    vals = criterion_values(rule, sigma, criterion)
    ok = vals <= delta
    j = rule.enumeration
    if not ok[-1]:
        warnings.warn(f"no term meets the {criterion} criterion at sigma={sigma}, delta={delta}",
                      SplitWarning, stacklevel=2)
        return int(j[-1])
    bad = np.nonzero(~ok)[0]
    if bad.size == 0:
        return -1
    return int(j[bad[-1]])


def balanced_split(rule: QuadratureRule) -> int:
    """Cut that puts the first ``ceil(R/2)`` kept terms into the long-range part."""
    return int(rule.enumeration[(rule.rank - 1) // 2])


def support_radius_for(rule: QuadratureRule, R_l: int, delta: float) -> float:
    """Smallest ``sigma`` at which every short term meets the max criterion at ``delta``."""
    short = rule.enumeration > R_l
    if not short.any():
        return 0.0
    a, t = rule.weights[short], rule.nodes[short]
    return float(np.max(np.sqrt(np.maximum(np.log(a / delta), 0.0)) / t))


@dataclass(frozen=True, eq=False)
class RsSplit:
    """A kernel tensor split into long-range and short-range column sets."""

    R_l: int
    long: CanonicalTensor3
    short: CanonicalTensor3
    sigma: float = None
    delta: float = None
    criterion: str = None
    warned: bool = False

    @property
    def R_s(self) -> int:
        return self.short.rank

    @property
    def rank(self) -> int:
        return self.long.rank + self.short.rank

    @property
    def grid(self) -> GridSpec:
        return self.long.grid

    def full(self) -> CanonicalTensor3:
        return self.long + self.short

    def describe(self) -> dict:
        return {"R_l": self.R_l, "long_rank": self.long.rank, "R_s": self.R_s,
                "sigma": self.sigma, "delta": self.delta, "criterion": self.criterion,
                "no_short_term": self.warned}


def split_tensor(t: CanonicalTensor3, R_l: int, **info) -> RsSplit:
    """Partition the columns of ``t`` at label ``R_l`` (labels ``<= R_l`` are long-range).

    No arithmetic is done on values, so ``long + short`` equals ``t``
    entrywise.  Without labels the column position is used.
    """
    labels = t.column_labels
    if isinstance(R_l, bool) or int(R_l) != R_l:
        raise ValueError("R_l must be an integer")
    hi = int(labels.max()) if labels.size else -1
    if not -1 <= R_l <= hi:
        raise ValueError(f"R_l={R_l} outside [-1, {hi}]")
    if labels.size > 1 and np.any(np.diff(labels) <= 0):
        raise ValueError("columns must be ordered by increasing label")
    long_cols = np.nonzero(labels <= R_l)[0]
    short_cols = np.nonzero(labels > R_l)[0]
    return RsSplit(int(R_l), t.take(long_cols), t.take(short_cols), **info)


def split_kernel(rule: QuadratureRule, grid: GridSpec, sigma=None, delta=None, criterion="max",
                 R_l=None) -> RsSplit:
    """Project ``rule`` on ``grid`` and split it.

    Priority: explicit ``R_l``, else ``choose_split(sigma, delta)``, else
    :func:`balanced_split`.  When ``sigma`` is not given it is derived from
    the cut with ``delta`` (default ``1e-4``).
    """
    warned = False
    if R_l is None and sigma is not None:
        if delta is None:
            raise ValueError("sigma given without delta")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SplitWarning)
            R_l = choose_split(rule, sigma, delta, criterion)
        warned = any(issubclass(c.category, SplitWarning) for c in caught)
        for c in caught:
            warnings.warn(c.message, c.category, stacklevel=2)
    elif R_l is None:
        R_l = balanced_split(rule)
    if delta is None:
        delta = 1e-4
    if sigma is None:
        sigma = support_radius_for(rule, R_l, delta)
    t = project_kernel(rule, grid)
    return split_tensor(t, R_l, sigma=sigma, delta=delta, criterion=criterion, warned=warned)


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """Point charges ``q`` at ``centers`` (shape ``(N, 3)``)."""

    centers: np.ndarray
    charges: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        q = np.atleast_1d(np.asarray(self.charges, dtype=float))
        if c.size == 0:
            raise ValueError("no particles")
        if c.shape[1] != 3 or c.shape[0] != q.shape[0]:
            raise ValueError("centers must be (N, 3) with N charges")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(q))):
            raise ValueError("non-finite particle data")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "charges", q)

    @property
    def N(self) -> int:
        return len(self.charges)

    def check_inside(self, b: float):
        out = np.any(np.abs(self.centers) > b, axis=1)
        if out.any():
            i = int(np.nonzero(out)[0][0])
            raise ValueError(f"particle {i} at {self.centers[i].tolist()} outside the box [-{b}, {b}]^3")

    def scale(self, c: float) -> "ParticleSystem":
        return ParticleSystem(self.centers.copy(), c * self.charges)

    @classmethod
    def random(cls, N: int, half_width: float, rng=None, neutral=False) -> "ParticleSystem":
        """Uniform centres in ``[-half_width, half_width]^3``, charges ``+-1``."""
        rng = np.random.default_rng(rng)
        c = rng.uniform(-half_width, half_width, size=(N, 3))
        if neutral:
            q = np.where(np.arange(N) % 2 == 0, 1.0, -1.0)
            rng.shuffle(q)
        else:
            q = rng.choice([-1.0, 1.0], size=N)
        return cls(c, q)

    @classmethod
    def from_file(cls, path) -> "ParticleSystem":
        """Read ``x y z q`` lines; ``#`` starts a comment line."""
        rows = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 'x y z q', got {len(parts)} fields")
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
        if not rows:
            raise ValueError("no particles")
        a = np.array(rows)
        return cls(a[:, :3], a[:, 3])

    def to_file(self, path):
        lines = ["# x y z q"]
        lines += [f"{x!r} {y!r} {z!r} {q!r}" for (x, y, z), q in zip(self.centers.tolist(), self.charges.tolist())]
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True, eq=False)
class RsCanonicalTensor:
    """Global long-range canonical tensor plus charge-weighted short-range replicas.

    ``short_ref`` is the short-range reference tensor on a ``(2 gamma + 1)``
    window centred on its middle cell; replica ``nu`` adds
    ``charges[nu] * short_ref`` centred at cell ``centers[nu]``.
    """

    grid: GridSpec
    long: CanonicalTensor3
    short_ref: CanonicalTensor3
    gamma: int
    centers: np.ndarray
    charges: np.ndarray
    snap_displacement: float = 0.0
    ref_long: CanonicalTensor3 = None
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.charges)

    @property
    def corners(self) -> np.ndarray:
        return self.centers - self.gamma

    def short_block(self) -> np.ndarray:
        if "_block" not in self.meta:
            self.meta["_block"] = self.short_ref.dense()
        return self.meta["_block"]

    def short_entries(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        if self.short_ref.rank == 0:
            return np.zeros(len(idx))
        return _kernels.replica_gather(self.short_block(), self.corners, self.charges, idx)

    def entries(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        if idx.size and (idx.min() < 0 or idx.max() >= self.grid.n):
            raise IndexError("index outside the grid")
        return self.long.entries(idx) + self.short_entries(idx)

    def entry(self, i) -> float:
        return float(self.entries(np.asarray(i).reshape(1, 3))[0])

    def short_dense(self) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        if self.short_ref.rank:
            _kernels.scatter_blocks(out, self.short_block(), self.corners, self.charges)
        return out

    def dense(self) -> np.ndarray:
        return self.long.dense() + self.short_dense()

    def scale(self, c: float) -> "RsCanonicalTensor":
        return RsCanonicalTensor(self.grid, self.long.scale(c), self.short_ref, self.gamma,
                                 self.centers, c * self.charges, self.snap_displacement, self.ref_long)

    @property
    def R_0(self) -> int:
        return self.short_ref.rank

    def storage(self) -> int:
        """Stored numbers: long factors and weights aside, the replica list
        (3 indices and 1 charge each) and one symmetric half-vector per short
        reference column (the three short factors coincide)."""
        return 3 * self.long.rank * self.grid.n + 4 * self.N + self.R_0 * (self.gamma + 1)

    def storage_bound(self) -> int:
        return 3 * self.long.rank * self.grid.n + 4 * self.N + 3 * self.R_0 * self.gamma

    def report(self) -> dict:
        return {"N": self.N, "long_rank": self.long.rank, "R_0": self.R_0, "gamma": self.gamma,
                "storage": self.storage(), "storage_bound": self.storage_bound(),
                "storage_bytes": 8 * self.storage(), "max_snap_displacement": self.snap_displacement}


def rs_entry(t: RsCanonicalTensor, i) -> float:
    """Long-range row product plus the replicas whose window covers ``i``."""
    return t.entry(i)


def short_window(short: CanonicalTensor3, gamma: int) -> CanonicalTensor3:
    """Central ``(2 gamma + 1)``-window of a reference tensor on an odd grid."""
    if short.grid.n % 2 != 1:
        raise ValueError("reference tensor must live on an odd grid centred at the origin")
    m = short.grid.n
    c = m // 2
    if gamma > c:
        raise ValueError(f"gamma={gamma} exceeds the reference grid half-size {c}")
    rows = slice(c - gamma, c + gamma + 1)
    w = 2 * gamma + 1
    g = GridSpec(b=0.5 * w * short.grid.h, n=w)
    return CanonicalTensor3(g, tuple(U[rows] for U in short.factors), short.weights.copy(),
                            None, short.labels)


def assemble_multiparticle(ref: RsSplit, system: ParticleSystem, grid: GridSpec, eps: float = 1e-6,
                           gamma=None, **compress_kw):
    """Collective potential of ``system`` in RS-canonical form.

    ``ref`` must be a split on ``grid.double()``.  Centres snap to the
    nearest cell centre.  The long-range windows are weighted by the
    charges, concatenated and compressed once; the short part is kept as
    replicas of a ``(2 gamma + 1)``-window with ``gamma = ceil(sigma / h)``.

    Returns
    -------
    (RsCanonicalTensor, TuckerTensor3, report dict)
    """
    if ref.grid != grid.double():
        raise ValueError("reference split must live on the double grid of the target")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    system.check_inside(grid.b)
    idx = np.stack([grid.nearest_index(system.centers[:, m]) for m in range(3)], axis=1)
    snap = float(np.max(np.linalg.norm(system.centers - grid.centers()[idx], axis=1)))

    windows = []
    for c, q in zip(idx, system.charges):
        windows.append(shift_window(ref.long, c, grid).scale(q))
    total = windows[0]
    if len(windows) > 1:
        f = tuple(np.hstack([w.factors[m] for w in windows]) for m in range(3))
        g = tuple(np.hstack([w.ghosts[m] for w in windows]) for m in range(3))
        total = CanonicalTensor3(grid, f, np.concatenate([w.weights for w in windows]), g)
    report = {"concatenated_rank": total.rank}
    if total.rank:
        tucker, long, crep = compress_can_tuck_can(total, eps, **compress_kw)
        report.update(crep)
    else:
        tucker, long = None, CanonicalTensor3.zeros(grid, with_ghosts=True)

    if gamma is None:
        sigma = ref.sigma if ref.sigma else 0.0
        gamma = max(1, math.ceil(sigma / grid.h - 1e-9))
    gamma = int(min(gamma, grid.n))
    short_ref = short_window(ref.short, gamma)
    rs = RsCanonicalTensor(grid, long, short_ref, gamma, idx, system.charges.copy(), snap, ref.long)
    report.update(rs.report())
    report["tucker_ranks"] = list(tucker.ranks) if tucker is not None else [0, 0, 0]
    log.info("assembled N=%d: long rank %d -> %d", system.N, total.rank, long.rank)
    return rs, tucker, report
