"""QMC weights, lambda selection, CBC construction and regularity diagnostics."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .lattice import GeneratingVector, normal_cdf
from .random_field import AFFINE, LOGNORMAL, RandomFieldSpec, coefficient_bounds

# B_2, B_4, ..., B_20
_BERNOULLI_EVEN = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6,
                   -3617 / 510, 43867 / 798, -174611 / 330)


def riemann_zeta(x: float, n_terms: int = 16) -> float:
    """zeta(x) for real x > 1 by Euler-Maclaurin summation."""
    if not x > 1:
        raise ValueError(f"zeta requires x > 1, got {x!r}")
    N = n_terms
    head = math.fsum(k ** -x for k in range(1, N))
    tail = N ** (1 - x) / (x - 1) + 0.5 * N ** -x
    rising = x  # x (x+1) ... (x+2j-2)
    corr = []
    for j, b in enumerate(_BERNOULLI_EVEN, start=1):
        corr.append(b / math.factorial(2 * j) * rising * N ** (-x - 2 * j + 1))
        rising *= (x + 2 * j - 1) * (x + 2 * j)
    return head + tail + math.fsum(corr)


def _check_lambda(lam: float):
    if not 0.5 < lam <= 1:
        raise ValueError(f"lambda must lie in (1/2, 1], got {lam!r}")


def varrho_uniform(lam: float) -> float:
    """2 zeta(2 lambda) / (2 pi^2)^lambda."""
    _check_lambda(lam)
    return 2.0 * riemann_zeta(2.0 * lam) / (2.0 * math.pi ** 2) ** lam


def varrho_lognormal(lam: float, alpha: float) -> float:
    _check_lambda(lam)
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    es = (2.0 * lam - 1.0) / (4.0 * lam)
    log_inner = (0.5 * math.log(2.0 * math.pi) + alpha ** 2 / es
                 - (2.0 - 2.0 * es) * math.log(math.pi) - math.log((1.0 - es) * es))
    log_val = math.log(2.0) + lam * log_inner + math.log(riemann_zeta(lam + 0.5))
    # the factor grows like exp(alpha^2 / es) as lambda -> 1/2
    return math.exp(log_val) if log_val < 709.0 else math.inf


def lambda_from_p(p: float, eps: float | None = None) -> float:
    """p/(2-p) for p in (2/3, 1); 1/(2-2 eps) for p <= 2/3."""
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p!r}")
    if p > 2.0 / 3.0:
        return p / (2.0 - p)
    if eps is None or not 0 < eps < 0.5:
        raise ValueError(f"p <= 2/3 requires eps in (0, 1/2), got {eps!r}")
    return 1.0 / (2.0 - 2.0 * eps)


def summability_exponent(decay: float, slack: float = 0.01) -> float:
    """A p with sum beta_j^p finite for beta_j ~ j^-decay, capped below 1."""
    return min(1.0 / decay + slack, 1.0 - 1e-9)


@dataclass(frozen=True)
class PODWeights:
    """gamma_u = (Gamma_{|u|} prod_{j in u} b_j)^(2/(1+lambda)).

    ``order_factor`` defaults to the factorial. A zero entry in
    ``dim_factors`` switches that dimension off.
    """

    dim_factors: np.ndarray
    lam: float
    order_factor: Callable[[int], float] = field(default=math.factorial, compare=False)

    def __post_init__(self):
        _check_lambda(self.lam)
        b = np.asarray(self.dim_factors, dtype=float)
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise ValueError("per-dimension factors must be finite and nonnegative")
        object.__setattr__(self, "dim_factors", b)

    @property
    def exponent(self) -> float:
        return 2.0 / (1.0 + self.lam)

    @property
    def s(self) -> int:
        return len(self.dim_factors)

    def gamma(self, u: Iterable[int]) -> float:
        """Weight of the subset ``u`` of 0-based coordinate indices."""
        u = list(u)
        prod = float(self.order_factor(len(u)))
        for j in u:
            prod *= self.dim_factors[j]
        return prod ** self.exponent

    def order_weights(self, q: int) -> np.ndarray:
        """Gamma_l^exponent for l = 0..q."""
        return np.array([float(self.order_factor(l)) ** self.exponent for l in range(q + 1)])

    def product_weights(self) -> np.ndarray:
        return self.dim_factors ** self.exponent


def affine_b(spec: RandomFieldSpec, c_dg: float = 1.0, alpha: float = 1.0) -> np.ndarray:
    """b_j = C_DG ||psi_j||_inf / (alpha a_min)."""
    a_min, _ = coefficient_bounds(spec)
    return c_dg * spec.amplitudes / (alpha * a_min)


def weights_affine(b: Sequence[float], lam: float, s: int | None = None) -> PODWeights:
    b = np.asarray(b, dtype=float)
    if s is not None:
        b = b[:s]
    if np.any(b <= 0):
        raise ValueError("affine weights need positive b_j")
    return PODWeights(b / math.sqrt(varrho_uniform(lam)), lam)


def alpha_lognormal(beta: float, lam: float) -> float:
    """(beta + sqrt(beta^2 + 1 - 1/(2 lambda))) / 2, kept at least beta (1 + 1e-6)."""
    _check_lambda(lam)
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    a = 0.5 * (beta + math.sqrt(beta * beta + 1.0 - 1.0 / (2.0 * lam)))
    floor = beta * (1.0 + 1e-6)
    if a < floor:
        warnings.warn(f"alpha={a} is too close to beta={beta}; lifting", RuntimeWarning, stacklevel=2)
        a = floor
    return a


def lognormal_dim_factor(beta: float, lam: float) -> float:
    if beta == 0:
        return 0.0
    a = alpha_lognormal(beta, lam)
    if a - beta <= 0:
        raise ValueError(f"alpha - beta must be positive (beta={beta})")
    denom = (2.0 * math.log(2.0) * math.exp(beta ** 2 / 2.0) * float(normal_cdf(beta))
             * math.sqrt((a - beta) * varrho_lognormal(lam, a)))
    return beta / denom


def weights_lognormal(beta: Sequence[float], lam: float, s: int | None = None) -> PODWeights:
    beta = np.asarray(beta, dtype=float)
    if s is not None:
        beta = beta[:s]
    return PODWeights(np.array([lognormal_dim_factor(float(b), lam) for b in beta]), lam)


def weights_for(spec: RandomFieldSpec, slack: float = 0.01, eps: float = 0.25,
                c_dg: float = 1.0, alpha: float = 1.0) -> PODWeights:
    """Theory-driven weights for a field spec, with lambda from p = 1/decay + slack."""
    lam = lambda_from_p(summability_exponent(spec.decay, slack), eps)
    if spec.mode == AFFINE:
        return weights_affine(affine_b(spec, c_dg, alpha), lam)
    return weights_lognormal(spec.amplitudes, lam)


# -- CBC ------------------------------------------------------------------

def bernoulli2(x):
    """B_2(x) = x^2 - x + 1/6 on [0, 1]."""
    x = np.asarray(x, dtype=float)
    return x * x - x + 1.0 / 6.0


def _kernel_rows(zs: np.ndarray, n: int) -> np.ndarray:
    k = np.arange(n, dtype=np.int64)
    r = (zs[:, None] * k[None, :]) % n
    # B_2 is symmetric about 1/2; folding makes z and n - z bit-identical
    return bernoulli2(np.minimum(r, n - r) / n)


def _fast_plan(n: int, cands: np.ndarray) -> list:
    """Index tables for the FFT evaluation of the kernel products.

    Writing k = 2^v k' with k' odd and N = n / 2^v, the odd residues mod N
    are {+-5^a}; since B_2 is even the kernel depends only on a + b, where
    z = +-5^b mod N, so each level is a cyclic correlation of length N / 4.
    """
    m = n.bit_length() - 1
    levels = []
    for v in range(m):
        N = n >> v
        if N == 2:
            levels.append((None, n // 2, None, None))
            continue
        M = max(N // 4, 1)
        pw = np.empty(M, dtype=np.int64)
        cur = 1
        for a in range(M):
            pw[a] = cur
            cur = cur * 5 % N
        g = bernoulli2(np.minimum(pw, N - pw) / N)
        dlog = np.empty(N, dtype=np.int64)
        dlog[pw] = np.arange(M)
        dlog[N - pw] = np.arange(M)
        levels.append((np.fft.rfft(g), pw << v, (N - pw) << v, dlog[cands % N]))
    return levels


def _kernel_products_fast(levels: list, V: np.ndarray, n_cands: int) -> np.ndarray:
    out = np.full(n_cands, bernoulli2(0.0) * V[0])
    for ghat, kpos, kneg, zb in levels:
        if ghat is None:
            out += bernoulli2(0.5) * V[kpos]
            continue
        W = V[kpos] + V[kneg]
        corr = np.fft.irfft(np.conj(np.fft.rfft(W)) * ghat, len(W))
        out += corr[zb]
    return out


PLAIN_CBC_MAX_N = 1 << 12


def cbc_construct(n: int, s: int, weights: PODWeights, max_order: int = 8,
                  capacity: int = 1 << 27, chunk: int = 512, method: str = "auto") -> GeneratingVector:
    """Component-by-component construction for POD weights.

    Each z_j is picked from the odd residues to minimise the shift-averaged
    worst-case error

        e^2 = (1/n) sum_k sum_{0 != u} gamma_u prod_{j in u} B_2({k z_j / n}),

    with orders above ``max_order`` dropped. Ties go to the smallest z_j.
    The squared errors after each stage are stored on the result.

    ``method`` is ``"plain"`` (direct O(n^2) sums per stage), ``"fast"``
    (FFT over the odd residues, O(n log n) per stage) or ``"auto"``, which
    uses the plain sums up to n = 2^12.
    """
    if n < 2 or n & (n - 1):
        raise ValueError(f"n must be a power of two >= 2, got {n}")
    if s < 1 or s > weights.s:
        raise ValueError(f"s must lie in [1, {weights.s}]")
    if method not in ("auto", "plain", "fast"):
        raise ValueError(f"method must be 'auto', 'plain' or 'fast', got {method!r}")
    if (max_order + 1) * n > capacity:
        raise ValueError(f"(q+1)*n = {(max_order + 1) * n} exceeds capacity {capacity}")
    fast = method == "fast" or (method == "auto" and n > PLAIN_CBC_MAX_N)
    q = max_order
    G = weights.order_weights(q)
    w = weights.product_weights()
    cands = np.arange(1, n, 2, dtype=np.int64)
    levels = _fast_plan(n, cands) if fast else None

    p = np.zeros((q + 1, n))
    p[0] = 1.0
    z, errs = [], []
    for j in range(s):
        top = min(j + 1, q)
        V = G[1:top + 1] @ p[:top]
        base = float(np.sum(G[1:q + 1] @ p[1:]))
        if fast:
            scores = _kernel_products_fast(levels, V, len(cands))
        else:
            scores = np.empty(len(cands))
            for c0 in range(0, len(cands), chunk):
                scores[c0:c0 + chunk] = _kernel_rows(cands[c0:c0 + chunk], n) @ V
        scores = base + w[j] * scores
        # ties judged against the summand magnitude, since the kernel sums cancel
        scale = abs(base) + w[j] * float(np.sum(np.abs(V))) / 6.0
        idx = int(np.flatnonzero(scores <= scores.min() + 1e-12 * scale)[0])
        zj = int(cands[idx])
        z.append(zj)
        errs.append(scores[idx] / n)
        om = _kernel_rows(np.array([zj]), n)[0]
        for l in range(top, 0, -1):
            p[l] += w[j] * om * p[l - 1]
    return GeneratingVector(np.array(z), n, errors=np.array(errs))


# -- ordered Bell numbers and regularity bounds -----------------------------

def ordered_bell(k: int, max_k: int = 1000) -> int:
    """Lambda_0 = 1, Lambda_k = sum_{l=1}^k C(k, l) Lambda_{k-l}."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k > max_k:
        raise OverflowError(f"k={k} exceeds configured limit {max_k}")
    L = [1]
    for m in range(1, k + 1):
        L.append(sum(math.comb(m, l) * L[m - l] for l in range(1, m + 1)))
    return L[k]


def ordered_bell_bound_holds(k: int) -> bool:
    """Lambda_k <= k! / (log 2)^k, compared in log space."""
    lhs = math.log(ordered_bell(k))
    rhs = math.lgamma(k + 1) - k * math.log(math.log(2.0))
    return lhs <= rhs + 1e-12


def regularity_bound(setting: str, nu: Sequence[int], spec: RandomFieldSpec, y=None, *,
                     c_dg: float = 1.0, alpha: float = 1.0, sigma: float = 1.0,
                     c_poin: float = 1.0, f_norm: float = 1.0 / math.sqrt(3.0),
                     sharp: bool = False) -> float:
    """Upper bound on ||d^nu u_h(., y)||_{V_h}.

    affine:    |nu|! b^nu (C_Poin / alpha) ||f||
    lognormal: C_DG^|nu| 4^|nu| |nu|!/(log 2)^|nu| beta^nu sigma / (alpha sqrt(a_min(y))) ||f||,
               only for |nu|_inf <= 1; ``sharp=True`` uses Lambda_|nu| in
               place of |nu|!/(log 2)^|nu|.

    ``f_norm`` defaults to ||x1||_{L2(D)}.
    """
    nu = np.asarray(nu, dtype=np.int64)
    if np.any(nu < 0):
        raise ValueError("multi-index entries must be nonnegative")
    if len(nu) > spec.s:
        raise ValueError("multi-index longer than the field dimension")
    order = int(nu.sum())
    beta = spec.amplitudes[:len(nu)]
    if setting == AFFINE:
        b = affine_b(spec, c_dg, alpha)[:len(nu)]
        return math.factorial(order) * float(np.prod(b ** nu)) * c_poin / alpha * f_norm
    if setting == LOGNORMAL:
        if np.any(nu > 1):
            raise ValueError("lognormal bound covers only |nu|_inf <= 1")
        if y is None:
            raise ValueError("lognormal bound needs the parameter y")
        a_min, _ = coefficient_bounds(spec, y)
        fac = ordered_bell(order) if sharp else math.factorial(order) / math.log(2.0) ** order
        return (c_dg ** order * 4.0 ** order * fac * float(np.prod(beta ** nu))
                * sigma / (alpha * math.sqrt(a_min)) * f_norm)
    raise ValueError(f"unknown setting {setting!r}")
