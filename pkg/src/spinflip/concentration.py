"""Concentration measurements: exponential moments, variances, tails, and the
conservation-under-dynamics pipelines.

Two inequality families are measured exactly over dense distribution vectors:

    GCB:  log E_mu e^{f - E_mu f} <= C ||delta f||_2^2
    UVB:  Var_mu(f)               <= C ||delta f||_2^2

Empirical constants are sups over finite test-function families and a
lambda-grid, so they are lower bounds on any valid constant; certified
constants for product measures (1/8 and 1/4) come from the Hoeffding moment
bound and the Efron-Stein inequality, which hold for every function, and are
what the conservation pipelines consume as the initial-measure input.

The pipelines evolve every Dirac start exactly (one transition matrix per t),
measure the per-start constants the theorems quantify over, and assert the
composite bounds term by term:

    exponential moments:  lhs <= D_t ||delta f||^2 + C_mu ||delta S(t)f||^2,
                          and C(mu S(t)) <= D_t + K(t) C_mu
    variances:            C(mu S(t)) <= C_mu K(t) + int C(sigma, t) dmu
    time-integrated:      Var under every start <= 2 chat int_0^t K(s)^2 ds
    (H, J, C):            int H(f - E f) d(mu S(t)) <= J((2 C_start
                          + 2 C_mu sqrt(K(t))) ||delta f||_2)

K(t) is the squared 2->2 norm of e^{t Gamma} from `dynamics`; the Lipschitz
contraction runs through the transposed matrix, which has the same singular
values, so one-sided bounds here are unaffected.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.special import logsumexp

from .dynamics import RateModel, engine_for, gamma_matrix, k_of_t
from .lattice import (
    Observable,
    Torus,
    lipschitz_norm,
    lipschitz_vector,
    lipschitz_vector_dense,
)

DEFAULT_LAMBDA_GRID = tuple(
    s * 0.25 * 2**k for k in range(4) for s in (1.0, -1.0)
)


def product_gcb_constant() -> float:
    """Valid GCB constant for every product measure on +-1 spins: the
    Hoeffding bound gives each conditional increment the moment factor
    e^{delta_i^2 / 8}, and the factors tensorize."""
    return 0.125


def product_uvb_constant() -> float:
    """Valid UVB constant for every product measure on +-1 spins, by the
    Efron-Stein inequality: Var <= sum_i (delta_i / 2)^2."""
    return 0.25


def _probs_of(mu) -> np.ndarray:
    probs = getattr(mu, "probs", mu)
    return np.asarray(probs, dtype=float)


def _map_ordered(fn, items, workers=None):
    if workers is None or workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class TestFunctionFamily:
    """Finite family of observables plus a lambda-grid of scale multipliers.

    Empirical constants maximize over members x grid; deterministic from the
    seed so reports are reproducible.
    """

    __test__ = False  # keeps pytest from collecting the class by its name

    def __init__(self, members, lambda_grid=DEFAULT_LAMBDA_GRID, label="family"):
        self.members = list(members)
        if not self.members:
            raise ValueError("family must be nonempty")
        self.lambda_grid = tuple(float(l) for l in lambda_grid)
        if any(l == 0 for l in self.lambda_grid):
            raise ValueError("zero scale makes the ratio undefined")
        self.label = label

    def __len__(self):
        return len(self.members)

    @classmethod
    def monomials(cls, torus: Torus, k_max: int, max_count: int = 40, lambda_grid=DEFAULT_LAMBDA_GRID):
        """All sigma_A with 1 <= |A| <= k_max in lexicographic order, capped."""
        members = []
        for size in range(1, k_max + 1):
            for sites in combinations(torus.sites(), size):
                members.append(Observable.monomial(torus, sites))
                if len(members) >= max_count:
                    return cls(members, lambda_grid, f"monomials:{k_max}")
        return cls(members, lambda_grid, f"monomials:{k_max}")

    @classmethod
    def random_combinations(
        cls,
        torus: Torus,
        count: int,
        seed: int,
        max_terms: int = 3,
        k_max: int = 3,
        lambda_grid=DEFAULT_LAMBDA_GRID,
    ):
        """Seeded sparse monomial combinations with coefficients in [-1, 1]."""
        rng = np.random.default_rng(seed)
        members = []
        for _ in range(count):
            n_terms = int(rng.integers(1, max_terms + 1))
            terms = []
            for _ in range(n_terms):
                size = int(rng.integers(1, k_max + 1))
                sites = rng.choice(torus.n_sites, size=size, replace=False)
                terms.append((float(rng.uniform(-1.0, 1.0)), [int(s) for s in sites]))
            members.append(Observable.monomial_sum(torus, terms))
        return cls(members, lambda_grid, f"random:{count}:{seed}")

    @classmethod
    def from_file(cls, path, torus: Torus, lambda_grid=DEFAULT_LAMBDA_GRID):
        from .lattice import load_observable

        return cls([load_observable(path, torus)], lambda_grid, f"file:{path}")

    def labeled(self):
        for idx, f in enumerate(self.members):
            yield f"f{idx}[{','.join(map(str, f.support))}]", f


def log_exponential_moment(mu, values: np.ndarray) -> float:
    """log E_mu e^{v - E_mu v}, log-sum-exp stabilized."""
    probs = _probs_of(mu)
    values = np.asarray(values, dtype=float)
    mean = float(probs @ values)
    return float(logsumexp(values - mean, b=probs))


def gcb_ratio(mu, f: Observable) -> float:
    """log E_mu e^{f - E_mu f} / ||delta f||_2^2; rejects constant f."""
    l2sq = lipschitz_norm(lipschitz_vector(f), 2.0) ** 2
    if l2sq == 0:
        raise ValueError("constant function: the ratio is undefined")
    return log_exponential_moment(mu, f.dense_values()) / l2sq


def variance(mu, values: np.ndarray) -> float:
    probs = _probs_of(mu)
    values = np.asarray(values, dtype=float)
    mean = float(probs @ values)
    return max(float(probs @ (values - mean) ** 2), 0.0)


@dataclass
class ConcentrationReport:
    kind: str  # "gcb" or "uvb"
    best_constant: float
    best_label: str
    rows: list = field(repr=False)
    bound: float | None = None
    violations: list = field(default_factory=list)
    family_label: str = ""

    @property
    def holds(self) -> bool:
        return not self.violations


def empirical_gcb_constant(
    mu, family: TestFunctionFamily, bound: float | None = None, workers: int | None = None
) -> ConcentrationReport:
    """C-hat = max over members x lambda-grid of gcb_ratio(mu, lambda f).
    A lower bound on any valid GCB constant for mu."""
    probs = _probs_of(mu)

    def one(item):
        label, f = item
        values = f.dense_values()
        l2sq = lipschitz_norm(lipschitz_vector(f), 2.0) ** 2
        out = []
        for lam in family.lambda_grid:
            if l2sq == 0:
                continue
            ratio = log_exponential_moment(probs, lam * values) / (lam * lam * l2sq)
            out.append({"label": label, "lam": lam, "ratio": ratio, "lipschitz_sq": l2sq})
        return out

    rows = [r for chunk in _map_ordered(one, list(family.labeled()), workers) for r in chunk]
    if not rows:
        raise ValueError("family contains only constant functions")
    best = max(rows, key=lambda r: r["ratio"])
    violations = []
    if bound is not None:
        violations = [r for r in rows if r["ratio"] > bound * (1 + 1e-9) + 1e-12]
    return ConcentrationReport("gcb", best["ratio"], best["label"], rows, bound, violations, family.label)


def check_uvb(
    mu, family: TestFunctionFamily, bound: float | None = None, workers: int | None = None
) -> ConcentrationReport:
    """C-hat_var = max over members of Var_mu(f) / ||delta f||_2^2.
    Scale invariant, so the lambda-grid plays no role here."""
    probs = _probs_of(mu)

    def one(item):
        label, f = item
        l2sq = lipschitz_norm(lipschitz_vector(f), 2.0) ** 2
        if l2sq == 0:
            return None
        ratio = variance(probs, f.dense_values()) / l2sq
        return {"label": label, "lam": None, "ratio": ratio, "lipschitz_sq": l2sq}

    rows = [r for r in _map_ordered(one, list(family.labeled()), workers) if r is not None]
    if not rows:
        raise ValueError("family contains only constant functions")
    best = max(rows, key=lambda r: r["ratio"])
    violations = []
    if bound is not None:
        violations = [r for r in rows if r["ratio"] > bound * (1 + 1e-9) + 1e-12]
    return ConcentrationReport("uvb", best["ratio"], best["label"], rows, bound, violations, family.label)


@dataclass
class TailReport:
    rows: list
    constant: float
    lipschitz_sq: float

    @property
    def holds(self) -> bool:
        return all(r["ok"] for r in self.rows)


def check_subgaussian_tail(mu, f: Observable, u_grid, constant: float) -> TailReport:
    """Exact tail mu(f - E f >= u) against e^{-u^2 / (4 C ||delta f||_2^2)}."""
    probs = _probs_of(mu)
    values = f.dense_values()
    mean = float(probs @ values)
    l2sq = lipschitz_norm(lipschitz_vector(f), 2.0) ** 2
    if l2sq == 0:
        raise ValueError("constant function: the tail bound is undefined")
    rows = []
    for u in u_grid:
        u = float(u)
        tail = float(probs[values - mean >= u].sum())
        bnd = math.exp(-u * u / (4.0 * constant * l2sq))
        rows.append({"u": u, "tail": tail, "bound": bnd, "ok": tail <= bnd * (1 + 1e-12) + 1e-15})
    return TailReport(rows, constant, l2sq)


@dataclass
class WeakGCBReport:
    lambda0: float | None
    holds: bool
    var_ratio: float
    taylor_ratio: float
    small_lambda_ratio: float
    window_bound: float
    window_cutoff: float
    window_holds: bool
    rows: list


def weak_gcb_check(mu, f: Observable, constant: float, lambda_grid=None) -> WeakGCBReport:
    """Scans lambda down to 0.  lambda0 is the largest grid scale below which
    every ratio stays within `constant`.  Also checks the variance connection
    (the centered-moment ratio 2(E e^{lambda g} - 1)/lambda^2 tends to Var(g))
    and the explicit window: a UVB constant C gives the moment bound with
    constant e C / 2 for all lambda <= 1/(2||f||_inf + 1)."""
    probs = _probs_of(mu)
    values = f.dense_values()
    l2sq = lipschitz_norm(lipschitz_vector(f), 2.0) ** 2
    if l2sq == 0:
        raise ValueError("constant function: the ratio is undefined")
    if lambda_grid is None:
        lambda_grid = [2.0**-j for j in range(0, 13)]
    lambda_grid = sorted(set(float(l) for l in lambda_grid), reverse=True)
    if any(l <= 0 for l in lambda_grid):
        raise ValueError("scales must be positive")
    var_ratio = variance(probs, values) / l2sq
    rows = []
    for lam in lambda_grid:
        logmom = log_exponential_moment(probs, lam * values)
        rows.append({"lam": lam, "ratio": logmom / (lam * lam * l2sq), "log_moment": logmom})
    lambda0 = None
    for j, row in enumerate(rows):
        if all(r["ratio"] <= constant * (1 + 1e-9) + 1e-12 for r in rows[j:]):
            lambda0 = row["lam"]
            break
    lam_min = rows[-1]["lam"]
    taylor_ratio = 2.0 * math.expm1(rows[-1]["log_moment"]) / (lam_min * lam_min * l2sq)
    window_cutoff = 1.0 / (2.0 * f.sup_norm() + 1.0)
    window_bound = math.e * constant / 2.0
    window_holds = all(
        r["ratio"] <= window_bound * (1 + 1e-9) + 1e-12
        for r in rows
        if r["lam"] <= window_cutoff
    )
    return WeakGCBReport(
        lambda0,
        lambda0 is not None,
        var_ratio,
        taylor_ratio,
        rows[-1]["ratio"],
        window_bound,
        window_cutoff,
        window_holds,
        rows,
    )


def carre_du_champ(rates: RateModel, f: Observable) -> Observable:
    """Gamma(f, f)(sigma) = sum_i c(i, sigma) (f(sigma^i) - f(sigma))^2,
    tabulated on the grown support; checks ||Gamma(f,f)||_inf <= chat
    ||delta f||_2^2 with chat the sup rate."""
    if f.torus != rates.torus:
        raise ValueError("observable and rates live on different tori")
    support = set(f.support)
    grown = set(support)
    for i in support:
        grown |= set(rates.dependence(i))

    def fn(config):
        total = 0.0
        for i in support:
            diff = f(config.flip(i)) - f(config)
            total += rates.rate(i, config) * diff * diff
        return total

    out = Observable.from_function(rates.torus, sorted(grown), fn)
    chat = rates.max_rate()
    l2sq = lipschitz_norm(lipschitz_vector(f), 2.0) ** 2
    if out.sup_norm() > chat * l2sq * (1 + 1e-12) + 1e-12:
        raise RuntimeError(
            f"carre du champ bound violated: {out.sup_norm()} > {chat * l2sq}"
        )
    return out


def _rate_rows(rates: RateModel, n_states: int) -> np.ndarray:
    states = np.arange(n_states, dtype=np.int64)
    return np.stack([rates.rate_values(i, states) for i in range(rates.torus.n_sites)])


@dataclass
class PsiReport:
    t: float
    steps: int
    direct_sup: float
    integral_sup: float
    gap: float


def psi_identity_check(rates: RateModel, t: float, f: Observable, steps: int = 64) -> PsiReport:
    """psi(t; f, f) = S(t)(f^2) - (S(t)f)^2 against the variation-of-constants
    form 2 int_0^t S(t-s) Gamma_half(S(s)f, S(s)f) ds, composite Simpson in s.
    Gamma_half is the halved quadratic form (L(f^2) - 2 f L f)/2, so with the
    unhalved tabulation from carre_du_champ the prefactor is one.  The gap
    shrinks at fourth order in the step count."""
    if t < 0:
        raise ValueError("t must be >= 0")
    engine = engine_for(rates)
    v = f.dense_values()
    direct = engine.evolve_functions(v * v, t) - engine.evolve_functions(v, t) ** 2
    if t == 0:
        return PsiReport(0.0, 0, float(np.max(np.abs(direct))), 0.0, float(np.max(np.abs(direct))))
    if steps < 2 or steps % 2:
        raise ValueError("steps must be even and >= 2")
    h = float(t) / steps
    fi = engine.flip_index()
    rr = _rate_rows(rates, engine.n_states)

    def gamma_of(vals):
        diffs = vals[fi] - vals[None, :]
        return np.einsum("is,is->s", rr, diffs * diffs)

    weights = np.full(steps + 1, 2.0)
    weights[1::2] = 4.0
    weights[0] = weights[-1] = 1.0
    weights *= h / 3.0

    g = v.copy()
    acc = weights[0] * gamma_of(g)
    for k in range(1, steps + 1):
        g = engine.evolve_functions(g, h)
        acc = engine.evolve_functions(acc, h) + weights[k] * gamma_of(g)
    integral = acc
    gap = float(np.max(np.abs(direct - integral)))
    return PsiReport(float(t), steps, float(np.max(np.abs(direct))), float(np.max(np.abs(integral))), gap)


def evolve_dirac_matrix(rates: RateModel, t: float) -> np.ndarray:
    """All Dirac starts at once: row sigma is delta_sigma S(t)."""
    engine = engine_for(rates)
    out = engine.evolve_measures(np.eye(engine.n_states), t)
    return np.clip(out, 0.0, None)


def _start_gcb_ratios(T: np.ndarray, values: np.ndarray, l2sq: float) -> np.ndarray:
    """gcb ratio of every row of T for the given function values."""
    means = T @ values
    logmom = logsumexp(values[None, :] - means[:, None], b=T, axis=1)
    return np.asarray(logmom, dtype=float) / l2sq


def _start_variances(T: np.ndarray, values: np.ndarray) -> np.ndarray:
    ex = T @ values
    ex2 = T @ (values * values)
    return np.clip(ex2 - ex * ex, 0.0, None)


@dataclass
class TheoremReport:
    theorem: str
    t: float
    k_t: float
    c_mu: float
    inner_constant: float  # D_t, int C(sigma,t) dmu, 2 chat int K^2, or C_start
    composite_constant: float
    measured_constant: float
    rows: list = field(repr=False)
    holds: bool = True


def theorem31_check(
    rates: RateModel,
    t: float,
    mu,
    family: TestFunctionFamily,
    c_mu: float,
    tol: float = 1e-9,
    workers: int | None = None,
) -> TheoremReport:
    """Exponential-moment conservation.  D_t is the exact max over all Dirac
    starts and the family; the per-function bound and the composite constant
    D_t + K(t) C_mu are asserted.  c_mu must be a GCB constant valid for every
    function (certified, not empirical)."""
    probs = _probs_of(mu)
    engine = engine_for(rates)
    T = evolve_dirac_matrix(rates, t)
    mu_t = np.clip(engine.evolve_measures(probs, t), 0.0, None)

    def prepare(item):
        label, f = item
        values = f.dense_values()
        l2sq = lipschitz_norm(lipschitz_vector(f), 2.0) ** 2
        vt = engine.evolve_functions(values, t)
        l2sq_t = lipschitz_norm(lipschitz_vector_dense(rates.torus.n_sites, vt), 2.0) ** 2
        per_lam = {}
        for lam in family.lambda_grid:
            per_lam[lam] = float(np.max(_start_gcb_ratios(T, lam * values, lam * lam * l2sq)))
        return label, values, l2sq, l2sq_t, per_lam

    prepared = _map_ordered(prepare, list(family.labeled()), workers)
    d_t = max(r for *_, per_lam in prepared for r in per_lam.values())
    d_t = max(d_t, 0.0)

    rows = []
    measured = 0.0
    for label, values, l2sq, l2sq_t, _ in prepared:
        for lam in family.lambda_grid:
            lhs = log_exponential_moment(mu_t, lam * values)
            rhs = d_t * lam * lam * l2sq + c_mu * lam * lam * l2sq_t
            measured = max(measured, lhs / (lam * lam * l2sq))
            rows.append(
                {"label": label, "lam": lam, "lhs": lhs, "rhs": rhs, "ok": lhs <= rhs + tol}
            )
    k_t = k_of_t(gamma_matrix(rates).matrix, t)
    composite = d_t + k_t * c_mu
    holds = all(r["ok"] for r in rows) and measured <= composite + tol
    return TheoremReport("31", float(t), k_t, c_mu, d_t, composite, measured, rows, holds)


def theorem52_check(
    rates: RateModel,
    t: float,
    mu,
    family: TestFunctionFamily,
    c_mu: float,
    tol: float = 1e-9,
    workers: int | None = None,
) -> TheoremReport:
    """Variance conservation: measured UVB constant of mu S(t) against
    C_mu K(t) + int C(sigma, t) dmu(sigma), the start integral taken over the
    initial measure.  c_mu must be a UVB constant valid for every function."""
    probs = _probs_of(mu)
    engine = engine_for(rates)
    T = evolve_dirac_matrix(rates, t)
    mu_t = np.clip(engine.evolve_measures(probs, t), 0.0, None)

    def prepare(item):
        label, f = item
        values = f.dense_values()
        l2sq = lipschitz_norm(lipschitz_vector(f), 2.0) ** 2
        return label, values, l2sq, _start_variances(T, values) / l2sq

    prepared = _map_ordered(prepare, list(family.labeled()), workers)
    c_sigma = np.maximum.reduce([ratios for *_, ratios in prepared])
    avg_start = float(probs @ c_sigma)
    k_t = k_of_t(gamma_matrix(rates).matrix, t)
    composite = c_mu * k_t + avg_start

    rows = []
    measured = 0.0
    for label, values, l2sq, _ in prepared:
        ratio = variance(mu_t, values) / l2sq
        measured = max(measured, ratio)
        rows.append({"label": label, "ratio": ratio, "bound": composite, "ok": ratio <= composite + tol})
    holds = all(r["ok"] for r in rows)
    return TheoremReport("52", float(t), k_t, c_mu, avg_start, composite, measured, rows, holds)


@dataclass
class TimeIntegratedConstant:
    t: float
    c_hat: float
    k_squared_integral: float
    constant: float
    steps: int


def theorem53_constant(rates: RateModel, t: float, rel_tol: float = 1e-10) -> TimeIntegratedConstant:
    """C = 2 chat int_0^t K(s)^2 ds by composite Simpson with step doubling;
    a UVB constant for delta_sigma S(t) uniform in the start sigma."""
    if t < 0:
        raise ValueError("t must be >= 0")
    chat = rates.max_rate()
    if t == 0:
        return TimeIntegratedConstant(0.0, chat, 0.0, 0.0, 0)
    g = gamma_matrix(rates).matrix

    def integrand(s):
        return k_of_t(g, s) ** 2

    steps = 4
    prev = None
    while True:
        nodes = np.linspace(0.0, float(t), steps + 1)
        vals = np.array([integrand(s) for s in nodes])
        weights = np.full(steps + 1, 2.0)
        weights[1::2] = 4.0
        weights[0] = weights[-1] = 1.0
        integral = float(t) / steps / 3.0 * float(weights @ vals)
        if prev is not None and abs(integral - prev) <= rel_tol * abs(integral) + 1e-14:
            break
        if steps >= 4096:
            break
        prev = integral
        steps *= 2
    return TimeIntegratedConstant(float(t), chat, integral, 2.0 * chat * integral, steps)


def theorem53_check(
    rates: RateModel, t: float, family: TestFunctionFamily, tol: float = 1e-9
) -> TheoremReport:
    """Exhaustive check that every Dirac start satisfies the UVB with the
    time-integrated constant."""
    result = theorem53_constant(rates, t)
    T = evolve_dirac_matrix(rates, t)
    rows = []
    measured = 0.0
    for label, f in family.labeled():
        values = f.dense_values()
        l2sq = lipschitz_norm(lipschitz_vector(f), 2.0) ** 2
        worst = float(np.max(_start_variances(T, values))) / l2sq
        measured = max(measured, worst)
        rows.append({"label": label, "ratio": worst, "bound": result.constant, "ok": worst <= result.constant + tol})
    k_t = k_of_t(gamma_matrix(rates).matrix, t)
    holds = all(r["ok"] for r in rows)
    return TheoremReport(
        "53", float(t), k_t, 0.0, result.constant, result.constant, measured, rows, holds
    )


class HJCSpec:
    """Convex H, increasing J with its inverse, and a claimed constant C for
    the inequality int H(f - E f) dmu <= J(C ||delta f||_2)."""

    def __init__(self, h, j, j_inv, c: float, label: str = "custom"):
        if c <= 0:
            raise ValueError("C must be positive")
        self.h = h
        self.j = j
        self.j_inv = j_inv
        self.c = float(c)
        self.label = label
        self._verify()

    def _verify(self, lo: float = -6.0, hi: float = 6.0, n: int = 241):
        xs = np.linspace(lo, hi, n)
        hv = np.array([self.h(x) for x in xs])
        if np.any(np.diff(hv, 2) < -1e-9):
            raise ValueError("H fails the convexity grid check")
        ys = np.linspace(0.0, hi, n)
        jv = np.array([self.j(y) for y in ys])
        if np.any(np.diff(jv) < -1e-12):
            raise ValueError("J fails the monotonicity grid check")
        for y in (0.1, 1.0, 3.0):
            if abs(self.j_inv(self.j(y)) - y) > 1e-8:
                raise ValueError("J inverse fails the roundtrip check")


def hjc_library(name: str, c: float = 1.0) -> HJCSpec:
    """Builtins: 'square' (x^2, x^2), 'exponential' (cosh x - 1, e^x - 1),
    'abs_p:p' (|x|^p, x^p)."""
    if name == "square":
        return HJCSpec(lambda x: x * x, lambda y: y * y, math.sqrt, c, name)
    if name == "exponential":
        return HJCSpec(lambda x: math.cosh(x) - 1.0, math.expm1, math.log1p, c, name)
    if name.startswith("abs_p:"):
        p = float(name.split(":", 1)[1])
        if p < 1:
            raise ValueError("|x|^p is convex only for p >= 1")
        return HJCSpec(
            lambda x: abs(x) ** p, lambda y: y**p, lambda m: m ** (1.0 / p), c, name
        )
    raise ValueError(f"unknown (H, J) pair {name!r}")


def hjc_holds(mu, f: Observable, spec: HJCSpec) -> dict:
    """Direct check of the defining inequality for one function."""
    probs = _probs_of(mu)
    values = f.dense_values()
    mean = float(probs @ values)
    lhs = float(probs @ np.array([spec.h(x) for x in values - mean]))
    l2 = lipschitz_norm(lipschitz_vector(f), 2.0)
    rhs = spec.j(spec.c * l2)
    return {"lhs": lhs, "rhs": rhs, "ok": lhs <= rhs * (1 + 1e-9) + 1e-12}


def hjc_check(
    rates: RateModel,
    t: float,
    mu,
    spec: HJCSpec,
    family: TestFunctionFamily,
    tol: float = 1e-9,
    workers: int | None = None,
) -> TheoremReport:
    """(H, J, C) conservation along the dynamics.  Per-start constants are
    measured on the doubled centered functions (the convexity split H(a + b)
    <= H(2a)/2 + H(2b)/2 is what the proof uses), and the composite

        int H(f - E f) d(mu S(t)) <= J((2 C_start + 2 C_mu sqrt(K(t))) ||delta f||_2)

    is asserted for every family member and scale."""
    probs = _probs_of(mu)
    engine = engine_for(rates)
    T = evolve_dirac_matrix(rates, t)
    mu_t = np.clip(engine.evolve_measures(probs, t), 0.0, None)
    k_t = k_of_t(gamma_matrix(rates).matrix, t)

    hv = np.vectorize(spec.h, otypes=[float])

    def prepare(item):
        label, f = item
        base = f.dense_values()
        l2sq_base = lipschitz_norm(lipschitz_vector(f), 2.0) ** 2
        out = []
        for lam in family.lambda_grid:
            values = lam * base
            l2 = abs(lam) * math.sqrt(l2sq_base)
            # inner: every Dirac start, doubled centered function
            means = T @ values
            inner = np.sum(T * hv(2.0 * (values[None, :] - means[:, None])), axis=1)
            c_start = max(spec.j_inv(float(m)) for m in inner) / (2.0 * l2)
            # outer: the evolved function under the initial measure
            g = engine.evolve_functions(values, t)
            m_out = float(probs @ hv(2.0 * (g - float(probs @ g))))
            c_out = spec.j_inv(m_out) / (2.0 * lipschitz_norm(lipschitz_vector_dense(rates.torus.n_sites, g), 2.0))
            # left side under mu S(t)
            lhs = float(mu_t @ hv(values - float(mu_t @ values)))
            out.append((label, lam, l2, c_start, c_out, lhs))
        return out

    prepared = [r for chunk in _map_ordered(prepare, list(family.labeled()), workers) for r in chunk]
    c_start = max(r[3] for r in prepared)
    c_out = max(r[4] for r in prepared)
    rows = []
    holds = True
    for label, lam, l2, _, _, lhs in prepared:
        rhs = spec.j((2.0 * c_start + 2.0 * c_out * math.sqrt(k_t)) * l2)
        ok = lhs <= rhs * (1 + 1e-9) + tol
        holds = holds and ok
        rows.append({"label": label, "lam": lam, "lhs": lhs, "rhs": rhs, "ok": ok})
    composite = 2.0 * c_start + 2.0 * c_out * math.sqrt(k_t)
    return TheoremReport("hjc", float(t), k_t, c_out, c_start, composite, c_start, rows, holds)
