"""Exponent bookkeeping for the induction-on-scales argument.

Pure arithmetic over exact rationals wherever the inputs are rational: the
interpolation weight kappa(p), the candidate growth exponent for p > 6, the
finite-depth iterate of the bilinear-to-linear exponent recursion, the
two-thirds scale reduction, and the closing search that certifies the
candidate exponent is self-consistent.  Floats appear only inside searches.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import math


def _rat(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10 ** 12)
    return Fraction(x)


def interpolation_weight(p) -> Fraction:
    """kappa(p) = (p-4)/(p-2), the interpolation weight solving
    2/p = (1-kappa)/2 + kappa/p.  Defined for p > 4."""
    p = _rat(p)
    if p <= 4:
        raise ValueError("interpolation weight is defined for p > 4")
    return (p - 4) / (p - 2)


def candidate_growth_exponent(p) -> Fraction:
    """(p-6)/(2p-8) + 1/2 - 1/p, the candidate growth rate for p > 6; its
    limit as p decreases to 6 is 1/3."""
    p = _rat(p)
    if p <= 6:
        raise ValueError("candidate exponent is defined for p > 6")
    return (p - 6) / (2 * p - 8) + Fraction(1, 2) - 1 / p


def exponent_constants(p) -> dict:
    """kappa and (for p > 6) the candidate growth exponent, exact."""
    p = _rat(p)
    out = {"p": p, "kappa": interpolation_weight(p)}
    if p > 6:
        out["gamma_candidate"] = candidate_growth_exponent(p)
    return out


def iterate_growth_bound(p, eps, s: int, gamma_in, big_o) -> Fraction:
    """One closed-form pass of the s-step exponent recursion.

    Evaluates, term by term,
        2^-s
        + kappa (gamma+eps) [ (1-(1-kappa)^s)/kappa
                              - 2^{-s+1} (1-(2(1-kappa))^s)/(2 kappa - 1) ]
        + kappa 2^-s (1-2/p) (1-(2(1-kappa))^{s-1})/(2 kappa - 1)
        + big_o (1-kappa)^s.
    Exact in rational arithmetic.  p = 6 makes 2 kappa - 1 vanish and is
    rejected; take limits along p > 6 instead.
    """
    p = _rat(p)
    if p <= 6:
        raise ValueError("the recursion iterate needs p > 6; take p -> 6 limits")
    if s < 2:
        raise ValueError("the recursion needs at least two steps")
    kappa = interpolation_weight(p)
    eps = _rat(eps)
    gamma = _rat(gamma_in)
    big_o = _rat(big_o)
    one_minus = 1 - kappa
    q = 2 * one_minus
    denom = 2 * kappa - 1
    half_pow = Fraction(1, 2 ** s)
    term_lead = half_pow
    bracket = (1 - one_minus ** s) / kappa - 2 * half_pow * (1 - q ** s) / denom
    term_main = kappa * (gamma + eps) * bracket
    term_drag = kappa * half_pow * (1 - Fraction(2) / p) * (1 - q ** (s - 1)) / denom
    term_tail = big_o * one_minus ** s
    return term_lead + term_main + term_drag + term_tail


def scale_reduction_sequence(gamma_quad, depth: int) -> list[Fraction]:
    """Partial exponent bounds from iterating the two-thirds scale
    reduction: bound_k = (gamma_quad / 3) * sum_{j<k} (2/3)^j, increasing to
    gamma_quad."""
    gamma_quad = _rat(gamma_quad)
    if gamma_quad < 0 or depth < 1:
        raise ValueError("need gamma_quad >= 0 and depth >= 1")
    out = []
    acc = Fraction(0)
    term = gamma_quad / 3
    for _ in range(depth):
        acc += term
        out.append(acc)
        term *= Fraction(2, 3)
    return out


def default_eps_model(c_p: float = 10.0) -> Callable[[float, float], float]:
    """Transversality loss model eps(nu, p) = log(C_p) / (4 p log(1/nu)),
    matching the N^{(1/(4p)) log_{1/nu} C_p} form of the constant-tracking
    step; decreases to 0 as nu -> 0."""

    def model(nu: float, p: float) -> float:
        return math.log(c_p) / (4.0 * float(p) * math.log(1.0 / float(nu)))

    return model


def eps_model_from_table(pairs) -> Callable[[float, float], float]:
    """Loss model from tabulated (nu, eps) pairs, log-linear in nu between
    knots and constant beyond them; p-independent."""
    pts = sorted((float(nu), float(eps)) for nu, eps in pairs)
    if not pts:
        raise ValueError("empty loss table")
    log_nu = [math.log(nu) for nu, _ in pts]
    eps_vals = [e for _, e in pts]

    def model(nu: float, p: float) -> float:
        x = math.log(float(nu))
        if x <= log_nu[0]:
            return eps_vals[0]
        if x >= log_nu[-1]:
            return eps_vals[-1]
        for k in range(1, len(log_nu)):
            if x <= log_nu[k]:
                w = (x - log_nu[k - 1]) / (log_nu[k] - log_nu[k - 1])
                return eps_vals[k - 1] * (1 - w) + eps_vals[k] * w
        return eps_vals[-1]

    return model


@dataclass
class ContradictionWitness:
    s: int
    eps: Fraction
    nu: float
    eps_of_nu: float
    iterate_value: Fraction
    bound: Fraction


@dataclass
class ContradictionResult:
    closes: bool
    p: Fraction
    margin: Fraction
    witness: ContradictionWitness | None
    binding: str | None

    def to_dict(self) -> dict:
        return {
            "closes": self.closes,
            "p": float(self.p),
            "margin": float(self.margin),
            "witness": None if self.witness is None else {
                "s": self.witness.s,
                "eps": float(self.witness.eps),
                "nu": self.witness.nu,
                "eps_of_nu": self.witness.eps_of_nu,
                "iterate": float(self.witness.iterate_value),
                "bound": float(self.witness.bound),
            },
            "binding": self.binding,
        }


def contradiction_search(p, big_o=10, eps_model: Callable | None = None,
                         margin=Fraction(1, 100), s_max: int = 60,
                         eps_grid: Sequence | None = None,
                         nu_grid: Sequence[float] | None = None) -> ContradictionResult:
    """Search for parameters closing the self-consistency argument at p > 6.

    Seeks (s, eps, nu) with
        iterate(gamma_candidate) + eps(nu, p) < gamma_candidate + margin
    and the interpolation window condition
        1/2 - 1/p + eps(nu, p) < 1 - 4/p.
    A witness certifies that a growth exponent exceeding the candidate by
    more than the margin is inconsistent with the recursion; the margin
    absorbs the finite-s and finite-eps residue of the limiting argument
    (with s capped and eps bounded below, the strict margin-free closure is
    out of reach near p = 6, see the project notes).
    """
    p = _rat(p)
    if p <= 6:
        raise ValueError("the closing argument needs p > 6")
    margin = _rat(margin)
    gamma_c = candidate_growth_exponent(p)
    model = eps_model if eps_model is not None else default_eps_model()
    if eps_grid is None:
        eps_grid = [Fraction(1, 10 ** k) for k in range(1, 7)]
    if nu_grid is None:
        nu_grid = [4.0 ** (-j) for j in range(2, 26)]

    window_rhs = 1 - Fraction(4) / p - (Fraction(1, 2) - 1 / p)  # = 1/2 - 3/p
    nu_ok = [nu for nu in nu_grid
             if nu <= 0.1 and Fraction(model(nu, float(p))).limit_denominator(10 ** 12) < window_rhs]
    if not nu_ok:
        return ContradictionResult(closes=False, p=p, margin=margin, witness=None,
                                   binding="interpolation window (loss model too large)")

    bound = gamma_c + margin
    for s in range(2, s_max + 1):
        for eps in eps_grid:
            it = iterate_growth_bound(p, eps, s, gamma_c, big_o)
            if it >= bound:
                continue
            room = bound - it
            for nu in nu_ok:
                loss = Fraction(model(nu, float(p))).limit_denominator(10 ** 12)
                if loss < room:
                    return ContradictionResult(
                        closes=True, p=p, margin=margin,
                        witness=ContradictionWitness(
                            s=s, eps=_rat(eps), nu=float(nu),
                            eps_of_nu=float(loss), iterate_value=it, bound=bound),
                        binding=None)
    return ContradictionResult(closes=False, p=p, margin=margin, witness=None,
                               binding="recursion iterate (no (s, eps) fits the margin)")


# ---------------------------------------------------------------------------
# bilinear-to-linear bound assembly


def linear_bound_from_table(table: Sequence[tuple[float, float]], p: float,
                            eps_loss: float = 0.0, c_nu: float = 1.0) -> float:
    """C_nu N^{eps} sup_M (M/N)^{1/p - 1/2} D_multi(M) over a table of
    bilinear constants covering 1 <= M <= N (N = largest tabulated M)."""
    if not table:
        raise ValueError("empty bilinear table")
    table = sorted((float(m), float(v)) for m, v in table)
    n_big = table[-1][0]
    sup = max((m / n_big) ** (1.0 / p - 0.5) * v for m, v in table)
    return c_nu * n_big ** eps_loss * sup


def one_step_recursion_bound(dmulti_of_m: Callable[[float], float], p: float,
                             n_scale: float, nu: float, c_p: float = 10.0) -> float:
    """Numeric simulator of the one-step broad/narrow recursion.

    Iterates, with K = nu^{-1/2} and n chosen so K^n = sqrt(N),
        D(N)^p <= (C_p K^{p-2})^n
                  + C_p K^{4p} sum_{j<n} (C_p K^{p-2})^j D_multi(N K^{-2j})^p
    and returns the resulting bound on D(N, p).
    """
    if nu <= 0 or nu > 0.5:
        raise ValueError("nu must lie in (0, 1/2]")
    k_big = nu ** -0.5
    n_steps = max(1, int(round(math.log(math.sqrt(n_scale), k_big))))
    geom = (c_p * k_big ** (p - 2.0)) ** n_steps
    tail = 0.0
    for j in range(n_steps):
        scale_j = n_scale * nu ** j
        tail += (c_p * k_big ** (p - 2.0)) ** j * dmulti_of_m(scale_j) ** p
    total = geom + c_p * k_big ** (4.0 * p) * tail
    return total ** (1.0 / p)
