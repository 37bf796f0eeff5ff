"""Elementary symmetric polynomials, their derivatives, admissibility cones,
and the curvature quotient operator.

All evaluators accept batched input: the eigenvalue axis is always the last
axis, leading axes (if any) index nodes or samples.  Conventions sigma_0 = 1
and sigma_{-1} = 0 are fixed globally.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import ConeExitError, DomainError


def sigma_all(lam):
    """All values sigma_0(lam) .. sigma_n(lam), stacked along the last axis.

    Uses the one-variable-at-a-time recurrence
    sigma_j^(m) = sigma_j^(m-1) + lam_m * sigma_{j-1}^(m-1),
    which is O(n^2) and avoids the cancellation of divided-out forms.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    out = np.zeros(lam.shape[:-1] + (n + 1,))
    out[..., 0] = 1.0
    for m in range(n):
        x = lam[..., m, None]
        out[..., 1:m + 2] = out[..., 1:m + 2] + x * out[..., 0:m + 1]
    return out


def elem_sym(lam, k):
    """sigma_k(lam).  k = 0 returns 1 (empty product)."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 0 <= k <= n:
        raise DomainError(f"elem_sym order k={k} outside 0..{n}")
    return sigma_all(lam)[..., k]


def elem_sym_grad(lam, k):
    """Gradient of sigma_k: entry i equals sigma_{k-1} of lam with entry i
    removed.  Recomputed per deletion rather than divided out."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"elem_sym_grad order k={k} outside 1..{n}")
    grad = np.empty_like(lam)
    for i in range(n):
        sub = np.delete(lam, i, axis=-1)
        grad[..., i] = elem_sym(sub, k - 1)
    return grad


@dataclass(frozen=True)
class ConeMembership:
    order: int
    margins: np.ndarray  # sigma_1 .. sigma_k
    inside: bool


def cone_margins(lam, k):
    """Minimum of sigma_1..sigma_k, batched.  Positive iff lam in Gamma_k."""
    sig = sigma_all(lam)
    return sig[..., 1:k + 1].min(axis=-1)


def in_cone(lam, k):
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if lam.ndim != 1:
        raise DomainError("in_cone expects a single eigenvalue tuple")
    if not 1 <= k <= n:
        raise DomainError(f"cone order k={k} outside 1..{n}")
    margins = sigma_all(lam)[1:k + 1]
    return ConeMembership(order=k, margins=margins, inside=bool(np.all(margins > 0.0)))


def newton_maclaurin_margins(lam, k, l, r, s):
    """Slack of both Newton-Maclaurin inequality forms at lam in Gamma_k.

    Returns (product_margin, quotient_margin), each RHS - LHS of

        k(n-l+1) sigma_{l-1} sigma_k <= l(n-k+1) sigma_l sigma_{k-1},
        [sigma_k/C(n,k) / (sigma_l/C(n,l))]^{1/(k-l)}
            <= [sigma_r/C(n,r) / (sigma_s/C(n,s))]^{1/(r-s)}.

    Nonnegative values certify the inequalities at lam.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not (0 <= l < k <= n and r > s >= 0 and k >= r and l >= s):
        raise DomainError(f"invalid Newton-Maclaurin indices (k={k}, l={l}, r={r}, s={s})")
    sig = sigma_all(lam)
    if np.any(sig[..., 1:k + 1].min(axis=-1) <= 0.0):
        raise ConeExitError(f"newton_maclaurin_margins requires lam in Gamma_{k}", lam=np.atleast_2d(lam)[0])

    sig_lm1 = sig[..., l - 1] if l >= 1 else np.zeros(lam.shape[:-1])
    lhs = k * (n - l + 1) * sig_lm1 * sig[..., k]
    rhs = l * (n - k + 1) * sig[..., l] * sig[..., k - 1]
    product_margin = rhs - lhs

    def norm_quot(a, b):
        qa = sig[..., a] / comb(n, a)
        qb = sig[..., b] / comb(n, b)
        return (qa / qb) ** (1.0 / (a - b))

    quotient_margin = norm_quot(r, s) - norm_quot(k, l)
    return product_margin, quotient_margin


@dataclass(frozen=True)
class OperatorEval:
    value: float
    grad: np.ndarray
    quotient_terms: np.ndarray  # sigma_l / sigma_{k-1}, l = 0..k


def quotient_and_grads(lam, k, lower_orders=None):
    """sigma_l/sigma_{k-1} and their eigenvalue gradients, batched.

    Returns (quot, dquot): quot[..., j] = sigma_{orders[j]}/sigma_{k-1} and
    dquot[..., j, i] its derivative in lam_i, for orders = lower_orders + [k]
    (defaults to 0..k).  Raises ConeExitError where sigma_{k-1} <= 0.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 2 <= k <= n:
        raise DomainError(f"quotient operator order k={k} outside 2..{n}")
    sig = sigma_all(lam)
    den = sig[..., k - 1]
    if np.any(den <= 0.0):
        bad = np.argwhere(np.atleast_1d(den) <= 0.0)
        node = int(bad[0][0]) if bad.size else None
        bad_lam = np.atleast_2d(lam)[node] if node is not None else lam
        raise ConeExitError(
            f"sigma_{k-1} <= 0: ellipticity lost", node=node, lam=bad_lam)
    orders = list(range(k)) if lower_orders is None else list(lower_orders)
    orders = orders + [k]
    dden = elem_sym_grad(lam, k - 1)
    quot = np.empty(lam.shape[:-1] + (len(orders),))
    dquot = np.empty(lam.shape[:-1] + (len(orders), n))
    den_e = den[..., None]
    for j, a in enumerate(orders):
        num = sig[..., a]
        dnum = elem_sym_grad(lam, a) if a >= 1 else np.zeros_like(lam)
        quot[..., j] = num / den
        dquot[..., j, :] = (dnum * den_e - num[..., None] * dden) / den_e ** 2
    return quot, dquot


def g_operator(lam, alpha, alpha_k1, t):
    """Evaluate the homotopy quotient operator at a single eigenvalue tuple.

    alpha holds the k-1 lower coefficients (orders 0..k-2); the operator is

        sigma_k/sigma_{k-1} - sum_l t alpha_l sigma_l/sigma_{k-1} - alpha_k1.
    """
    lam = np.asarray(lam, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    k = alpha.shape[-1] + 1
    if np.any(alpha < 0.0):
        raise DomainError("coefficients alpha_l must be nonnegative")
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"homotopy parameter t={t} outside [0, 1]")
    if cone_margins(lam, k - 1) <= 0.0:
        raise ConeExitError(f"lam outside Gamma_{k-1}", lam=lam)
    quot, dquot = quotient_and_grads(lam, k)
    weights = np.concatenate([-t * alpha, [0.0], [1.0]])  # orders 0..k-2, k-1, k
    value = float(weights @ quot) - float(alpha_k1)
    grad = weights @ dquot
    return OperatorEval(value=value, grad=grad, quotient_terms=quot)
