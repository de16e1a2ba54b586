"""Deterministic mean-field map for the degree-resolved SIS process.

For each degree ``l`` the map is

    x'(l) = x(l) + (1/M) [ (1 - x(l)) g_inc,l(alpha) - x(l) g_dec,l(alpha) ]

with ``alpha = phi' x`` the infected-link probability and

    g_inc,l(alpha) = sum_a lam P21(l, a) C(l, a) alpha^a (1 - alpha)^(l - a)

(``g_dec`` likewise with the recovery table).  Each component is therefore a
bivariate polynomial in ``(x(l), alpha)``; that per-degree form is the
working representation.  :func:`dense_tensors` expands it into the
stacked-tensor form ``f(x) = A0 + A1 x + A2 x x + ...`` as a cross-check.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import comb

from .graph import DegreeDistribution
from .sis import TransitionKernel

__all__ = [
    "PolynomialDynamics",
    "DenseTensors",
    "MeanFieldTrajectory",
    "FixedPoint",
    "CapacityError",
    "RangeWarning",
    "build_dynamics",
    "mean_field_step",
    "dense_tensors",
    "jacobian",
    "simulate_mean_field",
    "asymptotic_state",
    "link_weights",
    "save_dynamics",
    "load_dynamics",
]


class CapacityError(RuntimeError):
    """Requested representation exceeds a supported size or polynomial degree."""


class RangeWarning(RuntimeWarning):
    """Mean-field state left [0, 1]."""


def link_weights(rho) -> np.ndarray:
    """phi(l) = l rho(l) / sum_k k rho(k), so that alpha = phi' x."""
    p = rho.probs if isinstance(rho, DegreeDistribution) else np.asarray(rho, dtype=float)
    l = np.arange(1, len(p) + 1)
    return l * p / (l @ p)


def _bernstein_basis(alpha: np.ndarray, L: int):
    """Return B[..., l-1, a] = alpha^a (1-alpha)^(l-a) (zero for a > l) and its alpha-derivative."""
    alpha = np.asarray(alpha, dtype=float)[..., None]
    k = np.arange(L + 1)
    apow = alpha**k  # (..., L+1)
    bpow = (1.0 - alpha) ** k
    l = np.arange(1, L + 1)[:, None]
    a = k[None, :]
    valid = a <= l
    lma = np.where(valid, l - a, 0)
    basis = apow[..., None, :] * np.take(bpow, lma, axis=-1)
    basis = np.where(valid, basis, 0.0)
    am1 = np.clip(a - 1, 0, None)
    lma1 = np.clip(l - a - 1, 0, None)
    d1 = a * np.take(apow, am1, axis=-1) * np.take(bpow, lma, axis=-1)
    d2 = (l - a) * apow[..., None, :] * np.take(bpow, lma1, axis=-1)
    deriv = np.where(valid, d1 - d2, 0.0)
    return basis, deriv


def _power_coefficients(bern: np.ndarray, l: int, rtol: float = 1e-13) -> np.ndarray:
    """Power-basis coefficients of sum_a bern[a] C(l,a) t^a (1-t)^(l-a), trailing zeros trimmed.

    Uses coef_k = C(l, k) * (k-th forward difference of bern at 0).
    """
    b = np.asarray(bern[: l + 1], dtype=float)
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    coefs = np.empty(l + 1)
    diff = b.copy()
    for k in range(l + 1):
        coefs[k] = comb(l, k, exact=True) * diff[0]
        diff = np.diff(diff)
    deg = 0
    for k in range(l, 0, -1):
        if abs(coefs[k]) > rtol * scale * comb(l, k, exact=True) * 2.0**k:
            deg = k
            break
    return coefs[: deg + 1]


@dataclass(frozen=True, eq=False)
class PolynomialDynamics:
    """Mean-field map in per-degree form.

    Attributes
    ----------
    rho : ndarray (L,)
        Degree distribution on 1..L, strictly positive.
    phi : ndarray (L,)
        Link weights, alpha = phi' x.
    lam : float
        Diffusion parameter the tables were built with.
    c_inc, c_dec : ndarray (L, L+1)
        ``c[l-1, a]`` = effective flip probability times ``C(l, a)``.
    m : float
        Population size M; the map moves by ``1/M`` times the net flow.
    """

    rho: np.ndarray
    phi: np.ndarray
    lam: float
    c_inc: np.ndarray
    c_dec: np.ndarray
    m: float

    @property
    def n_degrees(self) -> int:
        return len(self.rho)

    @property
    def m_scale(self) -> float:
        return 1.0 / self.m

    @cached_property
    def _binom(self) -> np.ndarray:
        L = self.n_degrees
        l = np.arange(1, L + 1)[:, None]
        a = np.arange(L + 1)[None, :]
        return np.where(a <= l, comb(l, a), 0.0)

    @cached_property
    def bern_inc(self) -> np.ndarray:
        """Effective infection probabilities lam*P21(l, a), shape (L, L+1)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self._binom > 0, self.c_inc / np.where(self._binom > 0, self._binom, 1), 0.0)

    @cached_property
    def bern_dec(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self._binom > 0, self.c_dec / np.where(self._binom > 0, self._binom, 1), 0.0)

    def alpha(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.phi

    def rates(self, alpha):
        """g_inc, g_dec and their alpha-derivatives at ``alpha``; each of shape (..., L)."""
        basis, deriv = _bernstein_basis(alpha, self.n_degrees)
        g_inc = np.sum(basis * self.c_inc, axis=-1)
        g_dec = np.sum(basis * self.c_dec, axis=-1)
        dg_inc = np.sum(deriv * self.c_inc, axis=-1)
        dg_dec = np.sum(deriv * self.c_dec, axis=-1)
        return g_inc, g_dec, dg_inc, dg_dec

    def evaluate(self, x) -> np.ndarray:
        """f(x) for ``x`` of shape (..., L), no range check."""
        x = np.asarray(x, dtype=float)
        g_inc, g_dec, _, _ = self.rates(self.alpha(x))
        return x + ((1.0 - x) * g_inc - x * g_dec) / self.m

    def jacobian(self, x) -> np.ndarray:
        """d f(l) / d x(m) for ``x`` of shape (..., L); returns (..., L, L)."""
        x = np.asarray(x, dtype=float)
        g_inc, g_dec, dg_inc, dg_dec = self.rates(self.alpha(x))
        diag = 1.0 - (g_inc + g_dec) / self.m
        coupling = ((1.0 - x) * dg_inc - x * dg_dec) / self.m
        eye = np.eye(self.n_degrees)
        return diag[..., :, None] * eye + coupling[..., :, None] * self.phi

    @cached_property
    def power_inc(self) -> list[np.ndarray]:
        """Per-degree power-basis coefficients of g_inc,l(alpha) (trimmed)."""
        return [_power_coefficients(self.bern_inc[l - 1], l) for l in range(1, self.n_degrees + 1)]

    @cached_property
    def power_dec(self) -> list[np.ndarray]:
        return [_power_coefficients(self.bern_dec[l - 1], l) for l in range(1, self.n_degrees + 1)]

    @cached_property
    def degree(self) -> int:
        """Total polynomial degree of f in x (at least 1)."""
        a, b = self.affine_split()
        tol = 1e-14 * max(1.0, np.abs(a).max(), np.abs(b).max())
        deg = 1
        for row in a:
            nz = np.flatnonzero(np.abs(row) > tol)
            if nz.size:
                deg = max(deg, int(nz[-1]))
        for row in b:
            nz = np.flatnonzero(np.abs(row) > tol)
            if nz.size:
                deg = max(deg, int(nz[-1]) + 1)
        return deg

    def affine_split(self) -> tuple[np.ndarray, np.ndarray]:
        """Power-basis coefficients (in alpha) of ``a_l`` and ``b_l`` with f_l = a_l(alpha) + x_l b_l(alpha).

        Returns two arrays of shape (L, D+1), D the largest g-degree.
        """
        L = self.n_degrees
        D = max(max(len(p) for p in self.power_inc), max(len(p) for p in self.power_dec)) - 1
        a = np.zeros((L, D + 1))
        b = np.zeros((L, D + 1))
        b[:, 0] = 1.0
        for i, (pi, pd) in enumerate(zip(self.power_inc, self.power_dec)):
            a[i, : len(pi)] += pi / self.m
            b[i, : len(pi)] -= pi / self.m
            b[i, : len(pd)] -= pd / self.m
        return a, b

    def to_dict(self) -> dict:
        return {
            "rho": self.rho.tolist(),
            "phi": self.phi.tolist(),
            "lambda": self.lam,
            "c_inc": self.c_inc.tolist(),
            "c_dec": self.c_dec.tolist(),
            "M": self.m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolynomialDynamics":
        return cls(
            rho=np.asarray(d["rho"], dtype=float),
            phi=np.asarray(d["phi"], dtype=float),
            lam=float(d["lambda"]),
            c_inc=np.asarray(d["c_inc"], dtype=float),
            c_dec=np.asarray(d["c_dec"], dtype=float),
            m=float(d["M"]),
        )


def build_dynamics(kernel: TransitionKernel, rho, m: float = 1.0) -> PolynomialDynamics:
    """Assemble the mean-field polynomial from a kernel and a degree distribution.

    Raises
    ------
    ValueError
        If some rho(l) is zero (every degree class must be populated) or the
        kernel does not cover degrees 1..L.
    """
    p = rho.probs if isinstance(rho, DegreeDistribution) else np.asarray(rho, dtype=float)
    L = len(p)
    if np.any(p <= 0):
        raise ValueError("rho(l) must be strictly positive for every degree 1..L")
    if abs(p.sum() - 1) > 1e-12:
        raise ValueError("rho must sum to 1")
    if kernel.max_degree < L:
        raise ValueError(f"kernel covers degrees up to {kernel.max_degree}, rho needs {L}")
    if m <= 0:
        raise ValueError("M must be positive")
    l = np.arange(1, L + 1)[:, None]
    a = np.arange(L + 1)[None, :]
    binom = np.where(a <= l, comb(l, a), 0.0)
    inc = np.zeros((L, L + 1))
    dec = np.zeros((L, L + 1))
    inc[:, :] = kernel.infection[1 : L + 1, : L + 1]
    dec[:, :] = kernel.recovery[1 : L + 1, : L + 1]
    c_inc = np.where(a <= l, inc * binom, 0.0)
    c_dec = np.where(a <= l, dec * binom, 0.0)
    for arr in (c_inc, c_dec):
        arr.setflags(write=False)
    return PolynomialDynamics(
        rho=p.copy(), phi=link_weights(p), lam=kernel.lam, c_inc=c_inc, c_dec=c_dec, m=float(m)
    )


def _flag_range(x: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.any(x < -tol) or np.any(x > 1 + tol))


def mean_field_step(dyn: PolynomialDynamics, x) -> np.ndarray:
    """One step of the mean-field map.  Warns (:class:`RangeWarning`) if the image leaves [0, 1]."""
    x = np.asarray(x, dtype=float)
    out = dyn.evaluate(x)
    if _flag_range(out):
        warnings.warn("mean-field state left [0, 1]", RangeWarning, stacklevel=2)
    return out


def jacobian(dyn: PolynomialDynamics, x) -> np.ndarray:
    return dyn.jacobian(x)


@dataclass(frozen=True)
class MeanFieldTrajectory:
    x: np.ndarray
    flagged: np.ndarray

    @property
    def any_flagged(self) -> bool:
        return bool(self.flagged.any())


def simulate_mean_field(dyn: PolynomialDynamics, x0, horizon: int) -> MeanFieldTrajectory:
    """Iterate the map ``horizon`` times; ``flagged[n]`` marks states outside [0, 1]."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    x = np.asarray(x0, dtype=float)
    if x.shape[-1] != dyn.n_degrees:
        raise ValueError("x0 has the wrong length")
    traj = np.empty((horizon + 1,) + x.shape)
    traj[0] = x
    for n in range(horizon):
        x = dyn.evaluate(x)
        traj[n + 1] = x
    flagged = np.array([_flag_range(t) for t in traj])
    return MeanFieldTrajectory(traj, flagged)


@dataclass(frozen=True)
class FixedPoint:
    x: np.ndarray
    converged: bool
    n_iter: int


def asymptotic_state(dyn: PolynomialDynamics, x0, tol: float = 1e-12,
                     max_iter: int = 200_000) -> FixedPoint:
    """Iterate the map until successive states differ by less than ``tol`` (sup norm).

    Non-convergence is reported through ``converged=False``, never raised.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x0, dtype=float)
    for n in range(1, max_iter + 1):
        nxt = dyn.evaluate(x)
        if np.max(np.abs(nxt - x)) < tol:
            return FixedPoint(nxt, True, n)
        x = nxt
    return FixedPoint(x, False, max_iter)


@dataclass(frozen=True)
class DenseTensors:
    """Stacked coefficient arrays: ``tensors[k]`` has shape (L,) + (L,)*k."""

    tensors: list

    @property
    def order(self) -> int:
        return len(self.tensors) - 1

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.array(self.tensors[0], dtype=float)
        for k in range(1, len(self.tensors)):
            t = self.tensors[k]
            for _ in range(k):
                t = t @ x
            out = out + t
        return out


def dense_tensors(dyn: PolynomialDynamics, max_order: int | None = None,
                  max_elements: int = 20_000_000) -> DenseTensors:
    """Expand the per-degree polynomial into dense tensors A_0..A_K.

    ``A_k[l, j1..jk]`` multiplies ``x_j1 ... x_jk``.  Terms ``g(alpha)`` give
    ``phi``-outer-product rows; terms ``x_l g(alpha)`` land on the
    ``A_{k+1}[l, l, ...]`` slice.
    """
    order = dyn.degree
    if max_order is None:
        max_order = order
    if max_order < order:
        raise CapacityError(f"polynomial has order {order}, max_order {max_order} too small")
    L = dyn.n_degrees
    total = sum(L ** (k + 1) for k in range(max_order + 1))
    if total > max_elements:
        raise CapacityError(f"dense tensors need {total} entries (limit {max_elements})")
    a_coef, b_coef = dyn.affine_split()
    tensors = [np.zeros((L,) * (k + 1)) for k in range(max_order + 1)]
    phi_pows = [np.ones(())]
    for k in range(1, max_order + 1):
        phi_pows.append(np.multiply.outer(phi_pows[-1], dyn.phi))
    for l in range(L):
        for k, c in enumerate(a_coef[l]):
            if c != 0 and k <= max_order:
                tensors[k][l] += c * phi_pows[k]
        for k, c in enumerate(b_coef[l]):
            if c != 0 and k + 1 <= max_order:
                tensors[k + 1][l, l] += c * phi_pows[k]
    return DenseTensors(tensors)


def save_dynamics(dyn: PolynomialDynamics, path) -> None:
    Path(path).write_text(json.dumps(dyn.to_dict(), indent=2))


def load_dynamics(path) -> PolynomialDynamics:
    return PolynomialDynamics.from_dict(json.loads(Path(path).read_text()))
