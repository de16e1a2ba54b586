"""Slow-time-scale degree evolution, stochastic dominance and diffusion thresholds.

States are degrees ``1..N`` with the last state an absorbing bucket for
"degree N or more".  Under preferential attachment with vertex-step
probability ``p`` a degree-``d`` node gains an edge at slow step ``k`` with
probability ``(2 - p) d / (2k)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .meanfield import _bernstein_basis, asymptotic_state, build_dynamics
from .sis import TransitionKernel

__all__ = [
    "EvolutionMatrix",
    "EvolutionError",
    "DominanceResult",
    "ThresholdResult",
    "evolution_matrix",
    "evolve_distribution",
    "ExactDistribution",
    "evolve_distribution_exact",
    "dominance_along_path_exact",
    "first_order_dominates",
    "second_order_dominates",
    "rowwise_dominates",
    "diffusion_threshold_closed_form",
    "diffusion_threshold_empirical",
    "self_consistency_map",
    "q_slope_at_zero",
    "threshold_sweep",
    "write_threshold_csv",
]


class EvolutionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EvolutionMatrix:
    p: float
    k: int
    size: int
    diag: np.ndarray
    upper: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.upper, 1)

    def apply(self, rho) -> np.ndarray:
        """H' rho without forming H."""
        rho = np.asarray(rho, dtype=float)
        out = self.diag * rho
        out[1:] += self.upper * rho[:-1]
        return out


def evolution_matrix(p: float, k: int, size: int) -> EvolutionMatrix:
    """Upper bidiagonal ``H_k(p)`` on degrees ``1..size`` with an absorbing last state.

    Raises
    ------
    EvolutionError
        If ``p`` is outside ``[0, 1]``, ``size < 2`` or ``k`` is too small
        for ``1 - (2 - p) d / (2k) >= 0`` up to ``d = size``.
    """
    if not 0.0 <= p <= 1.0:
        raise EvolutionError(f"attachment probability p={p} outside [0, 1]")
    if size < 2:
        raise EvolutionError("need at least two states")
    if k < 1 or (2.0 - p) * size > 2.0 * k:
        raise EvolutionError(
            f"k={k} too small for size={size}: need k >= (2-p)*size/2 = {(2 - p) * size / 2:g}; "
            "raise k or shrink size"
        )
    d = np.arange(1, size + 1, dtype=float)
    move = (2.0 - p) * d[:-1] / (2.0 * k)
    diag = np.append(1.0 - move, 1.0)
    return EvolutionMatrix(float(p), int(k), int(size), diag, move)


def evolve_distribution(rho0, p: float, k_start: int, k_end: int) -> np.ndarray:
    """Rows ``rho_k`` for ``k = k_start..k_end`` with ``rho_k = H_k' rho_{k-1}``; row 0 is ``rho0``."""
    rho = np.asarray(getattr(rho0, "probs", rho0), dtype=float).copy()
    if k_end < k_start:
        raise EvolutionError("k_end must be >= k_start")
    if np.any(rho < 0) or abs(rho.sum() - 1) > 1e-12:
        raise EvolutionError("rho0 must be a probability vector")
    out = np.empty((k_end - k_start + 1, len(rho)))
    out[0] = rho
    for i, k in enumerate(range(k_start + 1, k_end + 1), 1):
        rho = evolution_matrix(p, k, len(rho)).apply(rho)
        out[i] = rho
    return out


@dataclass(frozen=True, eq=False)
class ExactDistribution:
    """Rational distribution ``numerators / denominator`` with Python-int entries."""

    numerators: np.ndarray
    denominator: int

    @classmethod
    def from_weights(cls, weights) -> "ExactDistribution":
        w = [int(v) for v in weights]
        if any(v < 0 for v in w) or sum(w) == 0:
            raise EvolutionError("weights must be nonnegative integers with a positive sum")
        return cls(np.array(w, dtype=object), sum(w))

    @property
    def probs(self) -> np.ndarray:
        """Float view (rounded)."""
        return np.array([Fraction(int(v), self.denominator) for v in self.numerators], dtype=float)

    def scaled_to(self, denominator: int) -> np.ndarray:
        if denominator % self.denominator:
            raise EvolutionError("target denominator is not a multiple")
        return self.numerators * (denominator // self.denominator)


def evolve_distribution_exact(rho0: ExactDistribution, p, k_start: int, k_end: int) -> list:
    """Exact-arithmetic version of :func:`evolve_distribution`.

    ``p`` is converted with :class:`fractions.Fraction`; pass a Fraction
    (or a string such as ``"3/10"``) to keep the denominators small.  All
    rows returned for one ``p`` share denominators with any other ``p`` of
    the same denominator, so comparisons reduce to integer arithmetic.
    """
    p = Fraction(p)
    if not 0 <= p <= 1:
        raise EvolutionError(f"attachment probability p={p} outside [0, 1]")
    P, Q = p.numerator, p.denominator
    v = np.array(rho0.numerators, dtype=object)
    den = int(rho0.denominator)
    size = len(v)
    out = [ExactDistribution(v.copy(), den)]
    d = np.arange(1, size, dtype=object)
    if k_end > k_start:
        evolution_matrix(float(p), k_start + 1, size)  # validity; larger k stay valid
    for k in range(k_start + 1, k_end + 1):
        scale = 2 * Q * k
        move = (2 * Q - P) * d  # numerator of (2-p) d / (2k), over 2Qk
        flow = move * v[:-1]
        nv = v * scale
        nv[:-1] -= flow
        nv[1:] += flow
        v, den = nv, den * scale
        out.append(ExactDistribution(v.copy(), den))
    return out


def dominance_along_path_exact(rho0: ExactDistribution, p_low, p_high, k_start: int, k_end: int,
                               reduce_every: int = 16):
    """Check ``rho_k(p_low) >=_sd rho_k(p_high)`` exactly for every ``k`` in ``k_start..k_end``.

    Both chains are evolved together in integer arithmetic over one common
    denominator (``p_low`` and ``p_high`` are brought to a common
    denominator first), and the shared integer content is divided out every
    ``reduce_every`` steps.  Returns ``(holds, first_failing_k)``.
    """
    from math import gcd

    pa, pb = Fraction(p_low), Fraction(p_high)
    Q = pa.denominator * pb.denominator // gcd(pa.denominator, pb.denominator)
    Pa, Pb = int(pa * Q), int(pb * Q)
    for p in (pa, pb):
        if not 0 <= p <= 1:
            raise EvolutionError(f"attachment probability p={p} outside [0, 1]")
    size = len(rho0.numerators)
    if k_end > k_start:
        evolution_matrix(float(max(pa, pb)), k_start + 1, size)
        evolution_matrix(float(min(pa, pb)), k_start + 1, size)
    a = [int(v) for v in rho0.numerators]
    b = list(a)
    ma = [(2 * Q - Pa) * d for d in range(1, size)]
    mb = [(2 * Q - Pb) * d for d in range(1, size)]
    for step, k in enumerate(range(k_start + 1, k_end + 1), 1):
        scale = 2 * Q * k
        fa = [m * v for m, v in zip(ma, a)]
        fb = [m * v for m, v in zip(mb, b)]
        a = [v * scale for v in a]
        b = [v * scale for v in b]
        for d in range(size - 1):
            a[d] -= fa[d]
            a[d + 1] += fa[d]
            b[d] -= fb[d]
            b[d + 1] += fb[d]
        tail = 0
        for d in range(size - 1, 0, -1):
            tail += a[d] - b[d]
            if tail < 0:
                return False, k
        if step % reduce_every == 0:
            g = gcd(*a, *b)
            if g > 1:
                a = [v // g for v in a]
                b = [v // g for v in b]
    return True, None


@dataclass(frozen=True)
class DominanceResult:
    holds: bool
    first_violation_index: int | None = None

    def __bool__(self) -> bool:
        return self.holds


def _first_violation(lhs, rhs, tol, start=0) -> DominanceResult:
    if tol:
        rhs = rhs - tol
    bad = np.flatnonzero(np.asarray(lhs[start:] < rhs[start:], dtype=bool))
    if bad.size:
        return DominanceResult(False, int(bad[0]) + start)
    return DominanceResult(True, None)


def _pair(a, b):
    if isinstance(a, ExactDistribution) and isinstance(b, ExactDistribution):
        if len(a.numerators) != len(b.numerators):
            raise EvolutionError("distributions must have equal length")
        if a.denominator == b.denominator:
            return a.numerators, b.numerators
        return a.numerators * b.denominator, b.numerators * a.denominator
    if isinstance(a, ExactDistribution) or isinstance(b, ExactDistribution):
        raise EvolutionError("compare exact distributions with exact distributions")
    a = np.asarray(getattr(a, "probs", a), dtype=float)
    b = np.asarray(getattr(b, "probs", b), dtype=float)
    if a.shape != b.shape:
        raise EvolutionError("distributions must have equal length")
    return a, b


def first_order_dominates(rho_a, rho_b, tol: float = 0.0) -> DominanceResult:
    """rho_a >=_sd rho_b: every tail sum of ``rho_a`` is at least that of ``rho_b``.

    The tail form ``sum_{i>=j} rho_a(i) >= sum_{i>=j} rho_b(i)`` and the CDF
    form ``sum_{i<j} rho_a(i) <= sum_{i<j} rho_b(i)`` are equivalent for
    distributions, and each is computed exactly where the other one is
    not (zero upper tails vs. zero lower heads).  A violation is reported
    only where both forms show it, so rounding in a mathematically tied
    sum is not mistaken for a violation; no tolerance is added.  The
    full-sum comparison (index 0) is skipped.  Violation indices are 0-based
    tail starts.
    """
    a, b = _pair(rho_a, rho_b)
    if a.dtype == object and not tol:
        # exact integers: one tail-sum form suffices
        tail = np.cumsum((a - b)[::-1])[::-1]
        bad = np.flatnonzero(np.asarray(tail[1:] < 0, dtype=bool))
        return DominanceResult(False, int(bad[0]) + 1) if bad.size else DominanceResult(True, None)
    ta = np.cumsum(a[::-1])[::-1]
    tb = np.cumsum(b[::-1])[::-1]
    ha = np.concatenate(([0], np.cumsum(a)[:-1]))
    hb = np.concatenate(([0], np.cumsum(b)[:-1]))
    if tol:
        tb, hb = tb - tol, hb + tol
    bad = np.asarray((ta < tb) & (ha > hb), dtype=bool)
    bad[0] = False
    idx = np.flatnonzero(bad)
    if idx.size:
        return DominanceResult(False, int(idx[0]))
    return DominanceResult(True, None)


def second_order_dominates(rho_a, rho_b, tol: float = 0.0) -> DominanceResult:
    """rho_a >=_ssd rho_b: cumulative sums of the CDF of ``rho_a`` never exceed those of ``rho_b``."""
    a, b = _pair(rho_a, rho_b)
    ia = np.cumsum(np.cumsum(a))
    ib = np.cumsum(np.cumsum(b))
    return _first_violation(ib, ia, tol)


def rowwise_dominates(h_a: EvolutionMatrix, h_b: EvolutionMatrix, tol: float = 0.0) -> DominanceResult:
    """Every row of ``h_a`` first-order dominates the same row of ``h_b``; index is the row."""
    A = getattr(h_a, "matrix", h_a)
    B = getattr(h_b, "matrix", h_b)
    if np.shape(A) != np.shape(B):
        raise EvolutionError("matrices must have the same shape")
    for i, (ra, rb) in enumerate(zip(A, B)):
        if not first_order_dominates(ra, rb, tol):
            return DominanceResult(False, i)
    return DominanceResult(True, None)


# ------------------------------------------------------------- thresholds


def _kernel_p21_1(kernel, L: int) -> np.ndarray:
    p21 = kernel.p21 if isinstance(kernel, TransitionKernel) else np.asarray(kernel, dtype=float)
    if p21.ndim == 1:
        vals = p21
    else:
        if p21.shape[0] < L + 1:
            raise EvolutionError("kernel max degree is below the distribution length")
        vals = p21[1 : L + 1, 1]
    if len(vals) < L:
        raise EvolutionError("need P(l, 1) for every degree")
    return np.asarray(vals[:L], dtype=float)


def diffusion_threshold_closed_form(rho, kernel) -> float:
    """lambda* = sum_l l rho(l) / sum_l l^2 rho(l) P21(l, 1).

    ``kernel`` is a :class:`TransitionKernel` or the vector ``P21(l, 1)``
    for ``l = 1..L``.  Returns ``inf`` when the denominator vanishes, and
    an exact :class:`~fractions.Fraction` for an :class:`ExactDistribution`
    (exact in ``P21`` too when it is given as ``Fraction`` or ``int`` values).  The
    formula is the onset condition for unit recovery at the disease-free
    state with ``lambda`` scaling infection only.
    """
    if isinstance(rho, ExactDistribution):
        # exact rational result; rational P(l, 1) stay exact, floats are converted exactly
        v = rho.numerators
        if not isinstance(kernel, TransitionKernel) and all(
                isinstance(x, (Fraction, int)) for x in kernel[: len(v)]):
            if len(kernel) < len(v):
                raise EvolutionError("need P(l, 1) for every degree")
            vals = [Fraction(x) for x in kernel[: len(v)]]
        else:
            vals = [Fraction(float(x)) for x in _kernel_p21_1(kernel, len(v))]
        num = sum(l * int(x) for l, x in enumerate(v, 1))
        den = sum(l * l * int(x) * q for (l, x), q in zip(enumerate(v, 1), vals))
        return Fraction(num) / den if den > 0 else float("inf")
    r = np.asarray(getattr(rho, "probs", rho), dtype=float)
    l = np.arange(1, len(r) + 1)
    den = float(np.sum(l * l * r * _kernel_p21_1(kernel, len(r))))
    if den <= 0:
        return float("inf")
    return float(np.sum(l * r)) / den


@dataclass(frozen=True)
class ThresholdResult:
    value: float
    converged: bool
    flag: str = ""


def _is_endemic(kernel, rho, lam, x0, m, theta, tol, max_iter) -> bool:
    # empty degree classes carry no link weight; a negligible floor keeps the builder's positivity check
    rho = np.maximum(rho, 1e-15)
    dyn = build_dynamics(kernel.with_lambda(lam), rho / rho.sum(), m)
    if dyn.degree > 12:
        fp = asymptotic_state(dyn, x0, tol=tol, max_iter=max_iter)
        return bool(np.max(np.abs(fp.x)) > theta)
    # low degree: power-basis Horner is accurate and several times faster;
    # a state far below theta that keeps shrinking is declared disease-free
    a, b = dyn.affine_split()
    a_t, b_t, phi = a.T[::-1], b.T[::-1], dyn.phi
    x = np.asarray(x0, dtype=float)
    for _ in range(max_iter):
        al = phi @ x
        pa, pb = a_t[0].copy(), b_t[0].copy()
        for ca, cb in zip(a_t[1:], b_t[1:]):
            pa = pa * al + ca
            pb = pb * al + cb
        nxt = pa + x * pb
        if np.max(np.abs(nxt - x)) < tol:
            x = nxt
            break
        if np.max(np.abs(nxt)) < 1e-3 * theta and np.max(np.abs(nxt)) < np.max(np.abs(x)):
            return False
        x = nxt
    return bool(np.max(np.abs(x)) > theta)


def diffusion_threshold_empirical(rho, kernel: TransitionKernel, x0_small=0.01, m: float = 1.0,
                                  theta_pos: float = 1e-4, rtol: float = 1e-3,
                                  lam_max: float | None = None, tol: float = 1e-10,
                                  max_iter: int = 200_000) -> ThresholdResult:
    """Smallest lambda for which the asymptotic state from ``x0_small`` exceeds ``theta_pos``.

    Bisection on ``[0, lam_max]`` (default the largest lambda keeping
    ``lambda * P21 <= 1``) down to relative width ``rtol``.  Returns
    ``inf`` with flag ``"no-transmission"`` when ``P21`` vanishes and
    ``"bracket"`` when no endemic state exists at ``lam_max``.
    """
    r = np.asarray(getattr(rho, "probs", rho), dtype=float)
    x0 = np.broadcast_to(np.asarray(x0_small, dtype=float), r.shape).copy()
    if np.any(x0 <= 0) or np.any(x0 > 0.05):
        raise EvolutionError("x0_small entries must lie in (0, 0.05]")
    L = len(r)
    p21 = kernel.p21[: L + 1, : L + 1]
    if not np.any(p21 > 0):
        return ThresholdResult(float("inf"), True, "no-transmission")
    hi = 1.0 / p21.max() if lam_max is None else float(lam_max)
    if not _is_endemic(kernel, r, hi, x0, m, theta_pos, tol, max_iter):
        return ThresholdResult(float("inf"), False, "bracket")
    lo = 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if _is_endemic(kernel, r, mid, x0, m, theta_pos, tol, max_iter):
            hi = mid
        else:
            lo = mid
    return ThresholdResult(hi, True, "")


def self_consistency_map(rho, kernel: TransitionKernel, alpha) -> np.ndarray:
    """Q(alpha) = (1/<l>) sum_l l rho(l) g_inc,l / (g_inc,l + g_dec,l).

    Fixed points of Q are the link probabilities of fixed points of the
    mean-field map: at equilibrium ``x(l) = g_inc,l / (g_inc,l + g_dec,l)``.
    With unit recovery this is the Q of the threshold lemma.
    """
    r = np.asarray(getattr(rho, "probs", rho), dtype=float)
    L = len(r)
    alpha = np.asarray(alpha, dtype=float)
    basis, _ = _bernstein_basis(alpha, L)
    from scipy.special import comb

    ll, aa = np.meshgrid(np.arange(1, L + 1), np.arange(L + 1), indexing="ij")
    binom = np.where(aa <= ll, comb(ll, aa), 0.0)
    g_inc = np.sum(basis * kernel.infection[1 : L + 1, : L + 1] * binom, axis=-1)
    g_dec = np.sum(basis * kernel.recovery[1 : L + 1, : L + 1] * binom, axis=-1)
    tot = g_inc + g_dec
    ratio = np.divide(g_inc, tot, out=np.zeros_like(tot), where=tot > 0)
    l = np.arange(1, L + 1)
    return ratio @ (l * r) / float(l @ r)


def q_slope_at_zero(rho, kernel: TransitionKernel, h: float = 1e-3, tol: float = 1e-12,
                    max_levels: int = 12) -> float:
    """dQ/dalpha at 0 by Richardson extrapolation of central differences.

    The step starts at ``h`` and is halved until two successive
    extrapolated estimates agree to ``tol`` (relative).  A slope above 1
    means the disease-free state is unstable and an endemic state exists.
    """
    if h <= 0:
        raise EvolutionError("h must be positive")

    def central(step):
        q = self_consistency_map(rho, kernel, np.array([step, -step]))
        return (q[0] - q[1]) / (2 * step)

    # Neville tableau; the central difference error is even in the step
    table = [central(h)]
    best = table[0]
    for level in range(1, max_levels):
        row = [central(h / 2 ** level)]
        for j in range(1, level + 1):
            f = 4.0 ** j
            row.append((f * row[j - 1] - table[j - 1]) / (f - 1))
        if abs(row[-1] - best) <= tol * max(1.0, abs(row[-1])):
            return float(row[-1])
        best, table = row[-1], row
    return float(best)


def threshold_sweep(rho0, kernel, p_grid, k_start: int, k_end: int,
                    empirical_kernel: TransitionKernel | None = None, **empirical_kw):
    """Rows ``(p, k, lambda_cf, lambda_emp, dominance_ok)`` along evolved distributions.

    ``dominance_ok`` states that ``rho_k(p)`` is first-order dominated by
    ``rho_k`` of the previous (smaller) grid value.  ``lambda_emp`` is
    ``nan`` unless ``empirical_kernel`` is given.
    """
    grid = np.sort(np.asarray(p_grid, dtype=float))
    paths = {p: evolve_distribution(rho0, p, k_start, k_end) for p in grid}
    rows = []
    for i, p in enumerate(grid):
        for j, k in enumerate(range(k_start, k_end + 1)):
            rho = paths[p][j]
            cf = diffusion_threshold_closed_form(rho, kernel)
            emp = float("nan")
            if empirical_kernel is not None:
                emp = diffusion_threshold_empirical(np.maximum(rho, 0), empirical_kernel, **empirical_kw).value
            ok = True if i == 0 else bool(first_order_dominates(paths[grid[i - 1]][j], rho))
            rows.append((float(p), int(k), cf, emp, ok))
    return rows


def write_threshold_csv(rows, path) -> None:
    lines = ["p,k,lambda_star_cf,lambda_star_emp,dominance_ok"]
    lines += [f"{float(p)!r},{k},{float(cf)!r},{float(emp)!r},{str(ok).lower()}" for p, k, cf, emp, ok in rows]
    Path(path).write_text("\n".join(lines) + "\n")
