# lab/services/moments.py
"""
Closed forms and quadratures for the Gaussian objects of the model:
the law of (B_t, J_t), the fractional inverse moment E|m + sigma Z|^(-beta),
and the pathwise integrals of |J|^(-beta) behind the finiteness lemmas.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import integrate, special, stats

from lab.exceptions import IntegrationError, InvalidParameter
from lab.services.rng_paths import BrownianPath, SeedSpec, refine, refine_graded
from lab.services.timechange import PowerMap, h_eval, linear_power_integral

logger = logging.getLogger(__name__)

# Exponential decay (in units of m^2 / (2 sigma^2)) resolved left of the split.
SPLIT_DECAY = 20.0
QUAD_LIMIT = 200


@dataclass(frozen=True)
class MomentSpec:
    m: float
    sigma: float
    beta: float

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise InvalidParameter(f"beta must lie in (0, 1), got {self.beta}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidParameter(f"sigma must be positive, got {self.sigma}")
        if not math.isfinite(self.m):
            raise InvalidParameter("m must be finite")


@dataclass(frozen=True)
class GaussPair:
    """(B_t, J_t) at one time t."""

    t: float

    def __post_init__(self):
        if not self.t > 0:
            raise InvalidParameter(f"t must be positive, got {self.t}")

    @property
    def cov(self) -> np.ndarray:
        t = self.t
        return np.array([[t, t**2 / 2.0], [t**2 / 2.0, t**3 / 3.0]])

    @property
    def det(self) -> float:
        return self.t**4 / 12.0


def joint_density(pair: GaussPair, x: float, y: float) -> float:
    return float(stats.multivariate_normal(mean=[0.0, 0.0], cov=pair.cov).pdf([x, y]))


def density_bound(pair: GaussPair) -> float:
    """t^-2, dominating the peak 1 / (2 pi sqrt(det))."""
    return pair.t ** -2.0


# ---------- Fractional inverse moments ----------

def gaussian_abs_moment(beta: float) -> float:
    """E|Z|^(-beta) = 2^(-beta/2) Gamma((1-beta)/2) / sqrt(pi)."""
    if not 0.0 < beta < 1.0:
        raise InvalidParameter(f"beta must lie in (0, 1), got {beta}")
    return 2.0 ** (-beta / 2.0) * float(special.gamma((1.0 - beta) / 2.0)) / math.sqrt(math.pi)


def _qaws(func, a: float, b: float, wvar: Tuple[float, float], rtol: float) -> float:
    value, _err = integrate.quad(func, a, b, weight="alg", wvar=wvar, epsabs=0.0, epsrel=rtol, limit=QUAD_LIMIT)
    if not math.isfinite(value):
        raise IntegrationError(f"quadrature returned {value} on [{a}, {b}]")
    return value


def frac_inv_moment_quad(spec: MomentSpec, rtol: float = 1e-10) -> float:
    """
    E|m + sigma Z|^(-beta) through its kernel representation

        (2 sigma^2)^(-beta/2) / Gamma(beta/2)
            * int_0^1 exp(-a u) u^(beta/2 - 1) (1 - u)^(-beta/2 - 1/2) du,

    a = m^2 / (2 sigma^2). Both endpoint powers go into QUADPACK's algebraic
    weight; the interval is split where exp(-a u) has decayed so each half
    carries one singular endpoint and a smooth factor.
    """
    beta = spec.beta
    a = spec.m**2 / (2.0 * spec.sigma**2)
    left_power, right_power = beta / 2.0 - 1.0, -beta / 2.0 - 0.5
    split = 0.5 if a == 0.0 else min(0.5, SPLIT_DECAY / a)

    head = _qaws(lambda u: math.exp(-a * u) * (1.0 - u) ** right_power, 0.0, split, (left_power, 0.0), rtol)
    tail = _qaws(lambda u: math.exp(-a * u) * u**left_power, split, 1.0, (0.0, right_power), rtol)
    scale = (2.0 * spec.sigma**2) ** (-beta / 2.0) / float(special.gamma(beta / 2.0))
    return scale * (head + tail)


def laplace_transform_check(m: float, sigma: float, lam: float) -> float:
    """E exp(-lam |m + sigma Z|^2) = exp(-lam m^2 / (1 + 2 lam sigma^2)) / sqrt(1 + 2 lam sigma^2)."""
    if lam < 0:
        raise InvalidParameter(f"lam must be nonnegative, got {lam}")
    q = 1.0 + 2.0 * lam * sigma**2
    return math.exp(-lam * m**2 / q) / math.sqrt(q)


def mellin_moment(spec: MomentSpec, rtol: float = 1e-10) -> float:
    """
    E xi^(-beta/2) for xi = |m + sigma Z|^2 as
    Gamma(beta/2)^-1 int_0^inf L(lam) lam^(beta/2 - 1) d lam, L the Laplace
    transform above. [1, inf) is mapped to (0, 1] by lam = 1/t.
    """
    beta, m, s2 = spec.beta, spec.m, spec.sigma**2
    near = _qaws(lambda lam: laplace_transform_check(m, spec.sigma, lam), 0.0, 1.0, (beta / 2.0 - 1.0, 0.0), rtol)
    far = _qaws(
        lambda t: math.exp(-m**2 / (t + 2.0 * s2)) / math.sqrt(t + 2.0 * s2),
        0.0, 1.0, (-beta / 2.0 - 0.5, 0.0), rtol,
    )
    return (near + far) / float(special.gamma(beta / 2.0))


# ---------- Pathwise integrals of |J|^(-beta) ----------

def lemma2_mean(beta: float, delta: float) -> float:
    """
    E int_0^delta |J_t|^(-beta) dt = E|Z|^(-beta) 3^(beta/2) delta^(1 - 3beta/2) / (1 - 3beta/2);
    infinite once 3 beta / 2 >= 1.
    """
    if not delta > 0:
        raise InvalidParameter(f"delta must be positive, got {delta}")
    k = 1.0 - 1.5 * beta
    if k <= 0:
        return math.inf
    return gaussian_abs_moment(beta) * 3.0 ** (beta / 2.0) * delta**k / k


def lemma4_tail_bound(beta: float, t_max: float) -> float:
    """int_{t_max}^inf E|J_t|^(-beta) dt for 2/3 < beta < 1."""
    if not 2.0 / 3.0 < beta < 1.0:
        raise InvalidParameter(f"beta must lie in (2/3, 1), got {beta}")
    if not t_max > 0:
        raise InvalidParameter(f"t_max must be positive, got {t_max}")
    k = 1.5 * beta - 1.0
    return gaussian_abs_moment(beta) * 3.0 ** (beta / 2.0) * t_max ** (-k) / k


def _head(times: np.ndarray, values: np.ndarray, upto: float) -> Tuple[np.ndarray, np.ndarray]:
    """Grid and values cut at `upto`, the end node interpolated if needed."""
    n = int(np.searchsorted(times, upto, side="right"))
    t, v = times[:n], values[:n]
    if t[-1] < upto:
        t = np.append(t, upto)
        v = np.append(v, np.interp(upto, times, values))
    return t, v


def power_integral(values: np.ndarray, times: np.ndarray, beta: float) -> float:
    pieces, _ = linear_power_integral(values, times, beta)
    return float(np.sum(pieces))


def riemann_power_integral(values: np.ndarray, times: np.ndarray, beta: float, factor: int = 256) -> float:
    """Brute-force midpoint sum of |v|^(-beta), v linear on each interval, `factor` cells per interval."""
    frac = (np.arange(factor) + 0.5) / factor
    a, b = values[:-1, None], values[1:, None]
    h = np.diff(times)[:, None] / factor
    with np.errstate(divide="ignore"):
        return float(np.sum(h * np.abs(a + frac[None, :] * (b - a)) ** (-beta)))


@dataclass(frozen=True)
class Lemma2Result:
    estimate: float
    refined: Tuple[float, ...]
    divergent: bool
    # Integrals over [times[cutoff_node], delta], one per level.
    scored: Tuple[float, ...] = ()

    @property
    def growth(self) -> Tuple[float, ...]:
        return tuple(b / a - 1.0 for a, b in zip(self.scored[:-1], self.scored[1:]))


def lemma2_integral(
    beta: float,
    delta: float,
    noise: BrownianPath,
    seed: Optional[SeedSpec] = None,
    refinements: int = 2,
    growth: float = 0.10,
    grading: Optional[float] = None,
    cutoff_node: int = 32,
) -> Lemma2Result:
    """
    int_0^delta |J_t|^(-beta) dt on the noise grid, then on `refinements`
    successive factor-2 refinements of the same realisation. A graded noise
    path (pass its `grading`) is refined in index space so the smallest cell
    shrinks by 2^grading per step; otherwise every interval is bisected.

    The divergence flag is scored on the integral from the `cutoff_node`-th
    grid node of each level to delta. That cutoff shrinks with the grid while
    the cells next to it stay resolved, and the zero-anchored first cell (one
    bridge draw per level) stays out of the score. Flagged divergent when
    every refinement grows the scored integral by more than `growth`.
    """
    if not 0.0 < beta < 1.0:
        raise InvalidParameter(f"beta must lie in (0, 1), got {beta}")
    if not 0 < delta <= noise.horizon * (1.0 + 1e-12):
        raise InvalidParameter(f"delta={delta} outside (0, {noise.horizon}]")
    if not 0 <= cutoff_node < noise.steps or noise.times[cutoff_node] >= delta:
        raise InvalidParameter(f"cutoff node {cutoff_node} must lie inside (0, delta) on the noise grid")
    seed = seed or noise.seed
    if refinements and seed is None:
        raise InvalidParameter("refinement needs a SeedSpec")

    def integrals(path: BrownianPath) -> Tuple[float, float]:
        t, j = _head(path.times, path.j_values, min(delta, path.horizon))
        pieces, _ = linear_power_integral(j, t, beta)
        return float(np.sum(pieces)), float(np.sum(pieces[cutoff_node:]))

    values, scored = zip(*[integrals(p) for p in _refinement_chain(noise, seed, refinements, grading)])
    steps = [b / a - 1.0 for a, b in zip(scored[:-1], scored[1:])]
    divergent = bool(steps) and all(g > growth for g in steps)
    return Lemma2Result(values[0], tuple(values[1:]), divergent, tuple(scored))


def _refinement_chain(noise: BrownianPath, seed: Optional[SeedSpec], refinements: int, grading: Optional[float]):
    path = noise
    yield path
    for level in range(1, refinements + 1):
        if grading is not None:
            path = refine_graded(path, seed, grading, tag=level)
        else:
            path = refine(path, 2, seed, tag=level)
        yield path


def lemma4_alpha(beta: float) -> float:
    """The alpha whose clock exponent 2a/(2a+1) equals beta."""
    return beta / (2.0 * (1.0 - beta))


def lemma4_integral(beta: float, x0: float, y0: float, noise: BrownianPath, t_max: float) -> Tuple[float, float]:
    """
    (pathwise int_0^t_max |h(x0) + y0 t + J_t|^(-beta) dt, mean tail bound beyond t_max).
    h uses the alpha matched to beta.
    """
    if not 2.0 / 3.0 < beta < 1.0:
        raise InvalidParameter(f"beta must lie in (2/3, 1), got {beta}")
    if x0 == 0.0 and y0 == 0.0:
        raise InvalidParameter("the start must differ from the origin")
    if not 0 < t_max <= noise.horizon * (1.0 + 1e-12):
        raise InvalidParameter(f"t_max={t_max} outside (0, {noise.horizon}]")
    t, j = _head(noise.times, noise.j_values, min(t_max, noise.horizon))
    v = h_eval(PowerMap(lemma4_alpha(beta)), x0) + y0 * t + j
    head = power_integral(v, t, beta)
    if not math.isfinite(head):
        raise IntegrationError("integrand vanishes on a whole interval", code="integrand_singular")
    return head, lemma4_tail_bound(beta, t_max)
