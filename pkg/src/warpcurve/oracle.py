"""Independent brute-force and closed-form references.

Nothing here touches solver internals: these are the cross-checks the rest
of the package is validated against.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb, prod

import numpy as np

from .errors import DomainError, HypothesisError
from .geometry import GridFunction, WarpingFunction, warp_eval
from .problem import ProblemSpec, residual


def brute_sigma(lam, k):
    """sigma_k by literal summation over all C(n, k) index subsets."""
    lam = [float(x) for x in np.asarray(lam).ravel()]
    n = len(lam)
    if n > 12:
        raise DomainError("brute-force sigma_k limited to n <= 12")
    if not 0 <= k <= n:
        raise DomainError(f"order k={k} outside 0..{n}")
    return sum(prod(lam[i] for i in subset) for subset in combinations(range(n), k))


@dataclass(frozen=True)
class RadialProblem:
    """Constant-height reduction: u-only coefficients alpha_l = a_l f^{-(k-l)}
    turn the curvature equation into a scalar root problem in u."""

    warping: WarpingFunction
    n: int
    k: int
    amplitudes: tuple  # a_0 .. a_{k-1}
    r1: float
    r2: float

    def scalar_equation(self, u):
        """Phi(u) = sigma_k(e) kappa^k - sum_l a_l f^{-(k-l)} sigma_l(e) kappa^l."""
        f, fp, _ = warp_eval(self.warping, u)
        kappa = fp / f
        val = comb(self.n, self.k) * kappa ** self.k
        for l, a in enumerate(self.amplitudes):
            val -= a * f ** (-(self.k - l)) * comb(self.n, l) * kappa ** l
        return val


def radial_root(p: RadialProblem, tol=1e-12, max_iter=100):
    """Bisection root of the constant-leaf equation inside (r1, r2)."""
    lo, hi = p.r1, p.r2
    flo, fhi = p.scalar_equation(lo), p.scalar_equation(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise HypothesisError(
            f"no sign change of the radial equation on [{lo}, {hi}] "
            f"(Phi(r1)={flo:.3e}, Phi(r2)={fhi:.3e})")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = p.scalar_equation(mid)
        if abs(fmid) <= tol:
            return mid
        if np.sign(fmid) == np.sign(flo):
            lo, flo = mid, fmid
        else:
            hi = mid
    raise DomainError(f"bisection stalled; last |Phi| = {abs(fmid):.3e}")


def fd_directional(u: GridFunction, direction: GridFunction, t, spec: ProblemSpec):
    """Central-difference directional derivative of the residual along
    'direction', the reference the Jacobian paths are compared against."""
    d = direction.values
    dnorm = float(np.abs(d).max())
    if dnorm == 0.0:
        return u.with_values(np.zeros_like(u.values))
    h = 1e-5 * max(float(np.abs(u.values).max()), 1.0) / dnorm

    def attempt(step):
        Fp = residual(u.with_values(u.values + step * d), t, spec).values
        Fm = residual(u.with_values(u.values - step * d), t, spec).values
        return (Fp - Fm) / (2.0 * step)

    try:
        out = attempt(h)
    except Exception:
        out = attempt(0.1 * h)  # shrink once, then let any failure surface
    return u.with_values(out)
