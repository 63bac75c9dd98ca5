"""Budget-optimal split between labeled and unlabeled samples.

Minimizing ``V = s_yf / n + s_f / N`` subject to ``c_l n + c_u N <= C`` gives

    n* = C sqrt(s_yf / c_l) / S,   N* = C sqrt(s_f / c_u) / S,   V_min = S^2 / C

with ``S = sqrt(s_yf c_l) + sqrt(s_f c_u)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

__all__ = ["Allocation", "BudgetProblem", "allocation_variance", "optimal_allocation", "two_stage_plan"]

MIN_PER_ARM = 2


@dataclass(frozen=True)
class BudgetProblem:
    sigma2_yf: float
    sigma2_f: float
    c_l: float
    c_u: float
    C: float

    def __post_init__(self):
        for name in ("c_l", "c_u", "C"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if self.sigma2_yf < 0 or self.sigma2_f < 0:
            raise ValueError("variances must be nonnegative")
        if self.sigma2_yf == 0 and self.sigma2_f == 0:
            raise ValueError("at least one variance must be positive")


@dataclass(frozen=True)
class Allocation:
    n_star: float
    N_star: float
    v_min: float
    n_int: int
    N_int: int

    def to_dict(self) -> dict:
        return asdict(self)


def allocation_variance(sigma2_yf: float, sigma2_f: float, n: float, N: float) -> float:
    """``s_yf / n + s_f / N`` with a zero-variance arm contributing nothing."""

    def term(s, k):
        if s == 0:
            return 0.0
        return s / k if k > 0 else math.inf

    return term(sigma2_yf, n) + term(sigma2_f, N)


def _greedy_spend(p: BudgetProblem, n: int, N: int) -> tuple[int, int]:
    # each loop spends on one sample; budget comparisons carry a relative slack
    slack = 1e-12 * p.C
    while True:
        left = p.C - (p.c_l * n + p.c_u * N)
        options = []
        if p.c_l <= left + slack:
            options.append((allocation_variance(p.sigma2_yf, p.sigma2_f, n + 1, N), 0))
        if p.c_u <= left + slack:
            options.append((allocation_variance(p.sigma2_yf, p.sigma2_f, n, N + 1), 1))
        if not options:
            return n, N
        _, arm = min(options)
        if arm == 0:
            n += 1
        else:
            N += 1


def optimal_allocation(p: BudgetProblem) -> Allocation:
    """Continuous optimum plus an integer allocation that never exceeds the budget.

    The integer allocation floors both arms, then buys single samples for
    whichever arm lowers the variance more until nothing is affordable.
    """
    a = math.sqrt(p.sigma2_yf * p.c_l)
    b = math.sqrt(p.sigma2_f * p.c_u)
    total = a + b
    n_star = p.C * math.sqrt(p.sigma2_yf / p.c_l) / total
    N_star = p.C * math.sqrt(p.sigma2_f / p.c_u) / total
    v_min = total**2 / p.C
    n_int, N_int = _greedy_spend(p, math.floor(n_star + 1e-9), math.floor(N_star + 1e-9))
    return Allocation(n_star, N_star, v_min, n_int, N_int)


def two_stage_plan(pilot, c_l: float, c_u: float, remaining_budget: float) -> Allocation:
    """Plug pilot variance estimates into :func:`optimal_allocation`.

    ``pilot`` is anything with ``sigma2_yf`` and ``sigma2_f`` attributes (an
    ``InferenceResult``). Each arm gets at least two samples so the follow-up
    variance estimate is defined.
    """
    p = BudgetProblem(float(pilot.sigma2_yf), float(pilot.sigma2_f), c_l, c_u, remaining_budget)
    alloc = optimal_allocation(p)
    if MIN_PER_ARM * (c_l + c_u) > remaining_budget * (1 + 1e-12):
        raise ValueError("remaining budget cannot buy the minimum of two samples per arm")
    n, N = alloc.n_int, alloc.N_int
    if n >= MIN_PER_ARM and N >= MIN_PER_ARM:
        return alloc
    # give up samples of the other arm until the minimum fits, then respend
    n, N = max(n, MIN_PER_ARM), max(N, MIN_PER_ARM)
    while c_l * n + c_u * N > remaining_budget * (1 + 1e-12):
        if alloc.n_int < MIN_PER_ARM:
            N -= 1
        else:
            n -= 1
    n, N = _greedy_spend(p, n, N)
    return Allocation(alloc.n_star, alloc.N_star, alloc.v_min, n, N)
