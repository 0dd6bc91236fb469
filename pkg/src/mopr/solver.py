"""Linear and integer programs for constrained top-k selection.

The relaxed retrieval problem is ``max s.a`` over ``a in [0,1]^n`` with
``sum(a) = k`` plus accumulated representation cuts.  It is solved by a
self-contained two-phase bounded-variable simplex (no external solver):
nonbasic variables sit at a bound, entering/leaving choices follow Bland's
rule (lowest eligible index), which guarantees termination and determinism.
Small instances can also be solved exactly as integer programs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

TOL = 1e-9
FRACTIONAL_TOL = 1e-8


@dataclass(frozen=True)
class Cut:
    """Two-sided linear constraint |coefficients . a - offset| <= bound.

    ``coefficients`` are the witness statistic's values on the retrieval items
    divided by k; ``offset`` is its curated mean; ``bound`` is the target gap.
    """

    coefficients: np.ndarray
    offset: float
    bound: float

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        if not np.all(np.isfinite(coef)):
            raise ValueError("cut coefficients must be finite")
        object.__setattr__(self, "coefficients", coef)

    def rows(self) -> list[tuple[np.ndarray, float, float]]:
        return [(self.coefficients, self.offset - self.bound, self.offset + self.bound)]

    def violation(self, a: np.ndarray) -> float:
        """How far ``a`` sits outside the cut (0 when satisfied)."""
        return max(abs(float(self.coefficients @ a) - self.offset) - self.bound, 0.0)

    def with_bound(self, bound: float) -> "Cut":
        return Cut(self.coefficients, self.offset, bound)


@dataclass(frozen=True)
class HalfSpaceCut:
    """One-sided linear constraint coefficients . a <= rhs."""

    coefficients: np.ndarray
    rhs: float

    def rows(self) -> list[tuple[np.ndarray, float, float]]:
        return [(np.asarray(self.coefficients, dtype=float), -np.inf, self.rhs)]

    def violation(self, a: np.ndarray) -> float:
        return max(float(np.asarray(self.coefficients) @ a) - self.rhs, 0.0)


@dataclass
class LpSolution:
    a: np.ndarray
    objective: float
    status: str  # optimal | infeasible
    n_fractional: int = 0
    diagnostics: dict = field(default_factory=dict)


class _Simplex:
    """Two-phase bounded-variable simplex for max c.x, Ax = b, l <= x <= u."""

    def __init__(self, A: np.ndarray, b: np.ndarray, c: np.ndarray,
                 lower: np.ndarray, upper: np.ndarray):
        self.A = A
        self.b = b
        self.c = c
        self.lower = lower
        self.upper = upper
        self.n_rows, self.n_vars = A.shape
        # status per variable: 0 at lower, 1 at upper, 2 basic
        self.status = np.zeros(self.n_vars, dtype=int)
        self.basis = np.full(self.n_rows, -1, dtype=int)

    def _nonbasic_values(self) -> np.ndarray:
        x = np.where(self.status == 1, self.upper, self.lower)
        x[self.status == 2] = 0.0
        return x

    def _basic_values(self) -> np.ndarray:
        x_n = self._nonbasic_values()
        rhs = self.b - self.A @ x_n
        return np.linalg.solve(self.A[:, self.basis], rhs)

    def _iterate(self, c: np.ndarray, max_iter: int = 200000) -> None:
        for _ in range(max_iter):
            B = self.A[:, self.basis]
            x_b = self._basic_values()
            y = np.linalg.solve(B.T, c[self.basis])
            reduced = c - self.A.T @ y
            at_lower = (self.status == 0) & (self.upper > self.lower) & (reduced > TOL)
            at_upper = (self.status == 1) & (reduced < -TOL)
            eligible = np.flatnonzero(at_lower | at_upper)
            if eligible.size == 0:
                return
            j = int(eligible[0])  # Bland: lowest index
            delta = 1.0 if self.status[j] == 0 else -1.0
            w = np.linalg.solve(B, self.A[:, j])
            step = delta * w
            # ratio test: keep every basic variable inside its bounds
            t_best = self.upper[j] - self.lower[j]
            leave_row = -1
            for i in range(self.n_rows):
                vi = self.basis[i]
                if step[i] > TOL:
                    t_i = (x_b[i] - self.lower[vi]) / step[i]
                elif step[i] < -TOL:
                    t_i = (x_b[i] - self.upper[vi]) / step[i]
                else:
                    continue
                t_i = max(t_i, 0.0)
                if t_i < t_best - TOL or (
                    t_i < t_best + TOL
                    and leave_row >= 0
                    and vi < self.basis[leave_row]
                ):
                    t_best = t_i
                    leave_row = i
            if not np.isfinite(t_best):
                raise RuntimeError("LP is unbounded")
            if leave_row < 0:
                # entering variable runs to its opposite bound
                self.status[j] = 1 - self.status[j]
                continue
            leaving = self.basis[leave_row]
            self.basis[leave_row] = j
            self.status[j] = 2
            self.status[leaving] = 0 if step[leave_row] > 0 else 1
        raise RuntimeError("simplex iteration limit exceeded")

    def solve(self) -> tuple[np.ndarray, bool]:
        """Returns (x, feasible)."""
        n_struct = self.n_vars
        # initial point: all variables at lower bound, residuals absorbed by
        # per-row artificials where the slack cannot absorb them
        x0 = np.where(self.status == 1, self.upper, self.lower)
        resid = self.b - self.A @ x0
        art_cols = []
        art_of_row = {}
        for i in range(self.n_rows):
            slack_var = n_struct - self.n_rows + i  # slacks appended last, one per row
            lo, hi = self.lower[slack_var], self.upper[slack_var]
            want = resid[i] + x0[slack_var]
            if lo - TOL <= want <= hi + TOL:
                # slack absorbs the residual: make it basic
                self.basis[i] = slack_var
                self.status[slack_var] = 2
            else:
                clamped = min(max(want, lo), hi)
                # leave slack nonbasic at the nearest bound
                self.status[slack_var] = 0 if clamped == lo else 1
                sigma = 1.0 if want - clamped > 0 else -1.0
                col = np.zeros(self.n_rows)
                col[i] = sigma
                art_cols.append(col)
                art_of_row[i] = self.n_vars + len(art_cols) - 1
        if art_cols:
            self.A = np.hstack([self.A, np.column_stack(art_cols)])
            n_art = len(art_cols)
            self.c = np.concatenate([self.c, np.zeros(n_art)])
            self.lower = np.concatenate([self.lower, np.zeros(n_art)])
            self.upper = np.concatenate([self.upper, np.full(n_art, np.inf)])
            self.status = np.concatenate([self.status, np.full(n_art, 2, dtype=int)])
            for i, var in art_of_row.items():
                self.basis[i] = var
            self.n_vars = self.A.shape[1]
            # phase 1: drive artificials to zero
            phase1_c = np.zeros(self.n_vars)
            phase1_c[-n_art:] = -1.0
            self._iterate(phase1_c)
            x = self._assemble()
            if float(np.sum(x[-n_art:])) > 1e-7:
                return x[:n_struct], False
            # pin artificials at zero for phase 2
            self.upper[-n_art:] = 0.0
        self._iterate(self.c)
        return self._assemble()[:n_struct], True

    def _assemble(self) -> np.ndarray:
        x = self._nonbasic_values()
        x[self.basis] = self._basic_values()
        return np.clip(x, self.lower, np.minimum(self.upper, np.inf))


def _build_rows(cuts, n: int):
    rows = []
    for cut in cuts:
        for coef, lo, hi in cut.rows():
            if coef.shape != (n,):
                raise ValueError("cut coefficient length does not match pool size")
            rows.append((coef, lo, hi))
    return rows


def solve_lp(
    s: np.ndarray,
    cuts,
    k: int,
    var_bounds: list[tuple[float, float]] | None = None,
) -> LpSolution:
    """Maximize s.a over the box [0,1]^n with sum(a)=k and all cut rows.

    ``var_bounds`` optionally overrides per-variable bounds (used for
    branch-and-bound fixing).  The returned point is a vertex, so the number
    of fractional coordinates is at most the number of active cut rows + 1.
    """
    s = np.asarray(s, dtype=float)
    n = s.size
    if k > n:
        raise ValueError(f"k={k} exceeds pool size {n}")
    rows = _build_rows(cuts, n)
    if var_bounds is None:
        lo_a = np.zeros(n)
        hi_a = np.ones(n)
    else:
        lo_a = np.array([b[0] for b in var_bounds])
        hi_a = np.array([b[1] for b in var_bounds])
    # standard form: one equality row for sum(a)=k, one slack per cut row
    n_rows = 1 + len(rows)
    A = np.zeros((n_rows, n + n_rows))
    b = np.zeros(n_rows)
    slack_lo = np.zeros(n_rows)
    slack_hi = np.zeros(n_rows)
    A[0, :n] = 1.0
    A[0, n] = 1.0
    b[0] = float(k)
    slack_hi[0] = 0.0  # equality row
    for r, (coef, lo, hi) in enumerate(rows, start=1):
        if np.isfinite(hi):
            A[r, :n] = coef
            b[r] = hi
            slack_hi[r] = (hi - lo) if np.isfinite(lo) else np.inf
        else:
            A[r, :n] = -coef
            b[r] = -lo
            slack_hi[r] = np.inf
        A[r, n + r] = 1.0
    c = np.concatenate([s, np.zeros(n_rows)])
    lower = np.concatenate([lo_a, slack_lo])
    upper = np.concatenate([hi_a, slack_hi])
    simplex = _Simplex(A, b, c, lower, upper)
    x, feasible = simplex.solve()
    a = np.clip(x[:n], lo_a, hi_a)
    if not feasible:
        return LpSolution(a=a, objective=float("nan"), status="infeasible")
    if abs(float(a.sum()) - k) > 1e-6:
        return LpSolution(a=a, objective=float("nan"), status="infeasible")
    n_frac = int(np.sum((a > FRACTIONAL_TOL) & (a < 1.0 - FRACTIONAL_TOL)))
    return LpSolution(
        a=a,
        objective=float(s @ a),
        status="optimal",
        n_fractional=n_frac,
        diagnostics={"rows": len(rows)},
    )


def round_top_k(a: np.ndarray, k: int):
    """Indicator of the k largest entries of ``a``; ties to the lower index."""
    from mopr.similarity import Selection

    a = np.asarray(a, dtype=float)
    if a.size < k:
        raise ValueError("fewer entries than k")
    order = np.argsort(-a, kind="stable")
    indicator = np.zeros(a.size, dtype=int)
    indicator[order[:k]] = 1
    return Selection(indicator, k)


def check_cuts(a: np.ndarray, cuts, tol: float = 1e-8) -> list[tuple[int, float]]:
    """(index, violation) for every cut the point violates beyond tolerance."""
    report = []
    for idx, cut in enumerate(cuts):
        v = cut.violation(np.asarray(a, dtype=float))
        if v > tol:
            report.append((idx, v))
    return report


def _enumerate_ip(s: np.ndarray, cuts, k: int):
    from mopr.similarity import Selection

    n = s.size
    combos = np.array(list(combinations(range(n), k)), dtype=int)
    objectives = s[combos].sum(axis=1)
    feasible = np.ones(combos.shape[0], dtype=bool)
    for cut in cuts:
        for coef, lo, hi in cut.rows():
            vals = coef[combos].sum(axis=1)
            if np.isfinite(lo):
                feasible &= vals >= lo - 1e-9
            if np.isfinite(hi):
                feasible &= vals <= hi + 1e-9
    if not np.any(feasible):
        raise ValueError("integer program infeasible")
    objectives = np.where(feasible, objectives, -np.inf)
    best = int(np.argmax(objectives))  # first max = lexicographically smallest combo
    indicator = np.zeros(n, dtype=int)
    indicator[combos[best]] = 1
    return Selection(indicator, k)


def solve_ip_exact(s: np.ndarray, cuts, k: int, n_limit: int = 25):
    """Optimal binary selection on a small instance.

    Exhaustive enumeration for n <= 20, branch-and-bound with the LP bound
    above that.  Also asserts LP-relaxation dominance over the IP optimum.
    """
    s = np.asarray(s, dtype=float)
    n = s.size
    if n > n_limit:
        raise ValueError(f"pool size {n} exceeds exact-solver limit {n_limit}")
    lp = solve_lp(s, cuts, k)
    if n <= 20:
        sel = _enumerate_ip(s, cuts, k)
    else:
        sel = _branch_and_bound(s, cuts, k)
    ip_obj = float(s @ sel.indicator)
    if lp.status == "optimal" and ip_obj > lp.objective + 1e-6:
        raise AssertionError("IP objective exceeded the LP relaxation bound")
    return sel


def _branch_and_bound(s: np.ndarray, cuts, k: int):
    from mopr.similarity import Selection

    n = s.size
    best_obj = -np.inf
    best_ind: np.ndarray | None = None

    def recurse(bounds: list[tuple[float, float]]):
        nonlocal best_obj, best_ind
        lp = solve_lp(s, cuts, k, var_bounds=bounds)
        if lp.status != "optimal" or lp.objective <= best_obj + 1e-9:
            return
        frac = np.flatnonzero(
            (lp.a > FRACTIONAL_TOL) & (lp.a < 1.0 - FRACTIONAL_TOL)
        )
        if frac.size == 0:
            ind = (lp.a > 0.5).astype(int)
            if check_cuts(ind.astype(float), cuts):
                return
            if lp.objective > best_obj + 1e-9:
                best_obj = lp.objective
                best_ind = ind
            return
        j = int(frac[0])
        for fix in (1.0, 0.0):
            child = list(bounds)
            child[j] = (fix, fix)
            recurse(child)

    recurse([(0.0, 1.0)] * n)
    if best_ind is None:
        raise ValueError("integer program infeasible")
    return Selection(best_ind, k)
