"""Spin-flip rate models, exact generators, and uniformized semigroups.

The generator acts on observables as

    L f(sigma) = sum_i c(i, sigma) (f(sigma^i) - f(sigma)),

with flip rates c satisfying: positivity, translation invariance, finite
range R (c(i, .) reads only spins within Chebyshev distance R of i), and
boundedness.  On a torus with N <= 20 sites the full 2^N x 2^N generator
is assembled sparsely and e^{tL} is applied by uniformization: with
Lambda >= max exit rate and P = I + Q/Lambda,

    e^{tQ} = sum_k e^{-Lambda t} (Lambda t)^k / k!  P^k,

truncated when the Poisson tail drops below a tolerance (default 1e-13),
which bounds the total-variation truncation error for measures and the
sup-norm error for normalized functions.

Lipschitz propagation uses the flip-discrepancy matrix

    Gamma_ij = sup_sigma (c(i, sigma^j) - c(i, sigma)),

kept literal (diagonal included).  The entrywise estimate
delta_i S(t) f <= (e^{t Gamma^T} delta f)_i propagates through the
transpose (equivalently, convolution with the kernel gamma_t(i - j) in
the translation-invariant case), and K(t) = ||e^{t Gamma}||_{2->2}^2
controls ||delta S(t) f||_2^2 (singular values ignore the transpose).
Since Gamma >= 0 entrywise, e^{t Gamma} never contracts; the decay rate
alpha = 2 (eps - M), with eps = inf_sigma,i (c(i, sigma) + c(i, sigma^i))
and M = sup_i sum_{j != i} Gamma_ij, is reported separately and verified
against the exact semigroup before use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm, svdvals
from scipy.special import gammaln
from scipy.stats import poisson

from .gibbs import Potential
from .lattice import (
    Observable,
    Torus,
    lipschitz_vector,
    lipschitz_vector_dense,
    states_arange,
)

EXACT_STATE_CAP = 20
DEFAULT_TAIL_TOL = 1e-13


class RateModel:
    """Flip rates given per site as (sites, table) with multiset key bits.

    table has 2^k entries, k = len(sites); key bit j is the spin at
    sites[j] (+1 = bit 1).  Repeated sites (wrap collisions on tiny tori)
    keep one bit per listed site.
    """

    def __init__(self, torus: Torus, site_terms, label: str, translation_invariant: bool):
        self.torus = torus
        self._terms = list(site_terms)
        if len(self._terms) != torus.n_sites:
            raise ValueError("need one rate table per site")
        self.label = label
        self.translation_invariant = bool(translation_invariant)
        self._engines = {}

    def rate_table(self, i: int):
        return self._terms[i]

    def dependence(self, i: int):
        """Sorted set of sites c(i, .) actually reads."""
        sites, _ = self._terms[i]
        return tuple(sorted(set(sites)))

    def rate(self, i: int, state) -> float:
        bits = state.bits if hasattr(state, "bits") else int(state)
        sites, table = self._terms[i]
        key = 0
        for j, s in enumerate(sites):
            key |= ((bits >> s) & 1) << j
        return float(table[key])

    def rate_values(self, i: int, states: np.ndarray) -> np.ndarray:
        sites, table = self._terms[i]
        key = np.zeros_like(states)
        for j, s in enumerate(sites):
            key |= ((states >> np.int64(s)) & 1) << np.int64(j)
        return table[key]

    def rate_matrix(self, cap: int = EXACT_STATE_CAP) -> np.ndarray:
        """(N, 2^N) array of c(i, s) over all states."""
        states = states_arange(self.torus.n_sites, cap)
        out = np.empty((self.torus.n_sites, states.size))
        for i in self.torus.sites():
            out[i] = self.rate_values(i, states)
        return out

    def reachable_rates(self, i: int) -> np.ndarray:
        """All values c(i, .) attains (patterns of the deduped dependence set)."""
        sites, table = self._terms[i]
        dep = tuple(sorted(set(sites)))
        pats = np.arange(1 << len(dep), dtype=np.int64)
        key = np.zeros_like(pats)
        for j, s in enumerate(sites):
            key |= ((pats >> np.int64(dep.index(s))) & 1) << np.int64(j)
        return table[key]

    def min_rate(self) -> float:
        return min(float(self.reachable_rates(i).min()) for i in self.torus.sites())

    def max_rate(self) -> float:
        return max(float(self.reachable_rates(i).max()) for i in self.torus.sites())

    def interaction_range(self) -> int:
        r = 0
        for i in self.torus.sites():
            for j in self.dependence(i):
                r = max(r, self.torus.distance(i, j))
        return r

    def influencers(self):
        """Per site j, the sites i whose rate reads spin j (includes i = j)."""
        out = [[] for _ in self.torus.sites()]
        for i in self.torus.sites():
            for j in self.dependence(i):
                out[j].append(i)
        return out

    def __repr__(self):
        return f"{type(self).__name__}({self.label}, torus={self.torus.sides})"


class IndependentRates(RateModel):
    """c(i, sigma) = r: every site flips at a constant rate."""

    def __init__(self, torus: Torus, r: float = 1.0):
        r = float(r)
        if r <= 0:
            raise ValueError("rate must be positive")
        self.r = r
        table = np.array([r])
        terms = [((), table) for _ in torus.sites()]
        super().__init__(torus, terms, f"independent:{r}", True)


class GlauberRates(RateModel):
    """Detailed-balance rates c(i, sigma) = exp(-(H(sigma^i) - H(sigma))/2)
    for the periodic Gibbs measure of a finite-range potential."""

    def __init__(self, torus: Torus, potential: Potential):
        self.potential = potential
        terms_at = potential.terms_containing(torus)
        site_terms = []
        for i in torus.sites():
            dep = sorted({s for sites, _ in terms_at[i] for s in sites} | {i})
            pos = {s: j for j, s in enumerate(dep)}
            pats = np.arange(1 << len(dep), dtype=np.int64)
            dh = np.zeros(pats.size)
            ibit = np.int64(1 << pos[i])
            flipped = pats ^ ibit
            for sites, table in terms_at[i]:
                key = np.zeros_like(pats)
                key_f = np.zeros_like(pats)
                for j, s in enumerate(sites):
                    key |= ((pats >> np.int64(pos[s])) & 1) << np.int64(j)
                    key_f |= ((flipped >> np.int64(pos[s])) & 1) << np.int64(j)
                dh += table[key_f] - table[key]
            site_terms.append((tuple(dep), np.exp(-0.5 * dh)))
        super().__init__(torus, site_terms, "glauber", True)


class PerturbedRates(RateModel):
    """c(i, sigma) = 1 + eps(theta_i sigma) with sup |eps| = eps0 < 1."""

    def __init__(self, torus: Torus, offsets, table):
        table = np.asarray(table, dtype=float)
        offsets = tuple(tuple(int(x) for x in o) for o in offsets)
        if table.shape != (1 << len(offsets),):
            raise ValueError("table length must be 2^|offsets|")
        self.eps0 = float(np.max(np.abs(table)))
        if self.eps0 >= 1.0:
            raise ValueError(f"perturbation bound {self.eps0} must be < 1")
        self.offsets = offsets
        self.eps_table = table
        site_terms = []
        for i in torus.sites():
            base = torus.coord(i)
            sites = tuple(
                torus.site(tuple(b + o for b, o in zip(base, off))) for off in offsets
            )
            site_terms.append((sites, 1.0 + table))
        super().__init__(torus, site_terms, f"perturbed:{self.eps0}", True)

    @classmethod
    def pair(cls, torus: Torus, eps0: float) -> "PerturbedRates":
        """eps(i, sigma) = eps0 sigma_i sigma_{i+e_1}."""
        d = torus.dim
        offsets = ((0,) * d, tuple(1 if a == d - 1 else 0 for a in range(d)))
        # key bit j = spin at offsets[j]; product of the two spins
        table = eps0 * np.array([1.0, -1.0, -1.0, 1.0])
        return cls(torus, offsets, table)

    @classmethod
    def from_potential_shape(cls, torus: Torus, shape) -> "PerturbedRates":
        return cls(torus, shape.offsets, shape.table)


class CustomRates(RateModel):
    """Tabulated per-site rates; used for experiments and signed-rate algebra."""

    def __init__(self, torus: Torus, dep_fn, rate_fn, translation_invariant=False, label="custom"):
        site_terms = []
        for i in torus.sites():
            dep = tuple(sorted(set(dep_fn(i))))
            table = np.empty(1 << len(dep))
            for key in range(table.size):
                bits = 0
                for j, s in enumerate(dep):
                    bits |= ((key >> j) & 1) << s
                table[key] = rate_fn(i, bits)
            site_terms.append((dep, table))
        super().__init__(torus, site_terms, label, translation_invariant)


@dataclass
class ConditionsReport:
    positive: bool
    min_rate: float
    max_rate: float
    interaction_range: int
    translation_invariant: bool
    translation_checked: bool
    ok: bool


def validate_conditions(rates: RateModel, check_cap: int = 12) -> ConditionsReport:
    """Positivity, boundedness, finite range, translation invariance."""
    cmin = rates.min_rate()
    cmax = rates.max_rate()
    r = rates.interaction_range()
    ti = rates.translation_invariant
    checked = False
    n = rates.torus.n_sites
    if ti and n <= check_cap:
        from .lattice import translate_states

        c = rates.rate_matrix(cap=check_cap)
        checked = True
        for axis in range(rates.torus.dim):
            off = tuple(1 if a == axis else 0 for a in range(rates.torus.dim))
            perm = translate_states(rates.torus, off, cap=check_cap)
            for i in rates.torus.sites():
                j = rates.torus.translate(i, off)
                if not np.array_equal(c[j][perm], c[i]):
                    ti = False
                    break
            if not ti:
                break
    ok = (cmin > 0) and np.isfinite(cmax) and ti
    return ConditionsReport(cmin > 0, cmin, cmax, r, ti, checked, ok)


def generator_apply(rates: RateModel, f: Observable) -> Observable:
    """L f as an observable; the support grows by the interaction range."""
    if f.torus != rates.torus:
        raise ValueError("observable and rates live on different tori")
    support = set(f.support)
    grown = set(support)
    for i in support:
        grown.update(rates.dependence(i))
    grown = tuple(sorted(grown))
    pos = {s: j for j, s in enumerate(grown)}
    keys = np.arange(1 << len(grown), dtype=np.int64)
    table = np.zeros(keys.size)

    def values_of(obs, pats):
        key = np.zeros_like(pats)
        for j, s in enumerate(obs.support):
            key |= ((pats >> np.int64(pos[s])) & 1) << np.int64(j)
        return obs.table[key]

    fvals = values_of(f, keys)
    for i in f.support:
        flipped = keys ^ np.int64(1 << pos[i])
        grad = values_of(f, flipped) - fvals
        sites, rtab = rates.rate_table(i)
        rkey = np.zeros_like(keys)
        for j, s in enumerate(sites):
            rkey |= ((keys >> np.int64(pos[s])) & 1) << np.int64(j)
        table += rtab[rkey] * grad
    return Observable(rates.torus, grown, table)


def generator_matrix(rates: RateModel, cap: int = EXACT_STATE_CAP) -> sp.csr_matrix:
    """Sparse 2^N x 2^N generator: Q[s, s^i] = c(i, s), rows sum to zero."""
    n = rates.torus.n_sites
    states = states_arange(n, cap)
    size = states.size
    c = rates.rate_matrix(cap)
    rows = np.tile(states, n)
    cols = np.concatenate([states ^ np.int64(1 << i) for i in range(n)])
    data = c.reshape(-1)
    diag = -c.sum(axis=0)
    rows = np.concatenate([rows, states])
    cols = np.concatenate([cols, states])
    data = np.concatenate([data, diag])
    return sp.coo_matrix((data, (rows, cols)), shape=(size, size)).tocsr()


class SemigroupEngine:
    """Uniformized exact semigroup on the full state space of one rate model."""

    def __init__(self, rates: RateModel, cap: int = EXACT_STATE_CAP, tail_tol: float = DEFAULT_TAIL_TOL):
        self.rates = rates
        self.torus = rates.torus
        self.n_states = 1 << self.torus.n_sites
        if self.torus.n_sites > cap:
            raise ValueError(f"{self.torus.n_sites} sites exceeds the exact cap {cap}")
        self.tail_tol = float(tail_tol)
        self.rate_table = rates.rate_matrix(cap)
        exit_rate = self.rate_table.sum(axis=0)
        self.lam = float(exit_rate.max())
        q = generator_matrix(rates, cap)
        self.q = q
        if self.lam > 0:
            p = (q / self.lam + sp.identity(self.n_states, format="csr")).tocsr()
        else:
            p = sp.identity(self.n_states, format="csr")
        self.p = p
        self.pt = p.T.tocsr()
        self._flip_index = None

    def flip_index(self) -> np.ndarray:
        """(N, 2^N) index array: row i holds s ^ (1 << i)."""
        if self._flip_index is None:
            states = np.arange(self.n_states, dtype=np.int64)
            self._flip_index = np.stack(
                [states ^ np.int64(1 << i) for i in range(self.torus.n_sites)]
            )
        return self._flip_index

    def poisson_weights(self, t: float) -> np.ndarray:
        m = self.lam * float(t)
        if m <= 0:
            return np.array([1.0])
        k_max = int(poisson.isf(self.tail_tol, m)) + 2
        while poisson.sf(k_max, m) > self.tail_tol:
            k_max = 2 * k_max + 8
        k = np.arange(k_max + 1)
        return np.exp(-m + k * np.log(m) - gammaln(k + 1))

    def evolve_functions(self, values: np.ndarray, t: float) -> np.ndarray:
        """S(t) f for one function (2^N,) or a batch of columns (2^N, k)."""
        return self._apply(self.p, np.asarray(values, dtype=float), t)

    def evolve_measures(self, probs: np.ndarray, t: float) -> np.ndarray:
        """mu S(t) for one row (2^N,) or a batch of rows (k, 2^N)."""
        probs = np.asarray(probs, dtype=float)
        if probs.ndim == 1:
            return self._apply(self.pt, probs, t)
        return self._apply(self.pt, probs.T, t).T

    def _apply(self, op, vec: np.ndarray, t: float) -> np.ndarray:
        if float(t) < 0:
            raise ValueError("t must be >= 0")
        w = self.poisson_weights(t)
        acc = w[0] * vec
        cur = vec
        for k in range(1, w.size):
            cur = op @ cur
            acc = acc + w[k] * cur
        return acc

    def stationary(self, cap: int = 14) -> np.ndarray:
        """Left null vector of Q, normalized to a probability vector."""
        if self.torus.n_sites > cap:
            raise ValueError("stationary solve capped for dense linear algebra")
        a = self.q.T.toarray()
        a[-1, :] = 1.0
        b = np.zeros(self.n_states)
        b[-1] = 1.0
        pi = np.linalg.solve(a, b)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()

    def lipschitz_of(self, values: np.ndarray) -> np.ndarray:
        return lipschitz_vector_dense(self.torus.n_sites, values)


def engine_for(rates: RateModel, cap: int = EXACT_STATE_CAP, tail_tol: float = DEFAULT_TAIL_TOL) -> SemigroupEngine:
    """Engine cache: Q and P are reused across calls on the same rates."""
    key = (cap, tail_tol)
    if key not in rates._engines:
        rates._engines[key] = SemigroupEngine(rates, cap, tail_tol)
    return rates._engines[key]


def exact_semigroup_measure(rates: RateModel, t: float, probs, cap: int = EXACT_STATE_CAP) -> np.ndarray:
    return engine_for(rates, cap).evolve_measures(probs, t)


def exact_semigroup_function(rates: RateModel, t: float, values, cap: int = EXACT_STATE_CAP) -> np.ndarray:
    return engine_for(rates, cap).evolve_functions(values, t)


def nonlinear_semigroup(rates: RateModel, t: float, values, cap: int = EXACT_STATE_CAP) -> np.ndarray:
    """V(t) f = log S(t) e^f, stabilized by shifting out max f."""
    values = np.asarray(values, dtype=float)
    m = float(values.max())
    g = engine_for(rates, cap).evolve_functions(np.exp(values - m), t)
    return np.log(g) + m


@dataclass
class GammaResult:
    matrix: np.ndarray
    kernel: np.ndarray | None  # row of site 0 when translation invariant


def gamma_matrix(rates: RateModel) -> GammaResult:
    """Gamma_ij = sup_sigma (c(i, sigma^j) - c(i, sigma)), literal diagonal."""
    n = rates.torus.n_sites
    g = np.zeros((n, n))
    for i in rates.torus.sites():
        sites, table = rates.rate_table(i)
        dep = tuple(sorted(set(sites)))
        if not dep:
            continue
        pats = np.arange(1 << len(dep), dtype=np.int64)
        key = np.zeros_like(pats)
        for j, s in enumerate(sites):
            key |= ((pats >> np.int64(dep.index(s))) & 1) << np.int64(j)
        vals = table[key]
        for j in dep:
            flipped = pats ^ np.int64(1 << dep.index(j))
            keyf = np.zeros_like(pats)
            for jj, s in enumerate(sites):
                keyf |= ((flipped >> np.int64(dep.index(s))) & 1) << np.int64(jj)
            g[i, j] = float(np.max(table[keyf] - vals))
    kernel = g[0].copy() if rates.translation_invariant else None
    return GammaResult(g, kernel)


def lipschitz_propagation(rates: RateModel, t: float, delta) -> np.ndarray:
    """Entrywise bound on the Lipschitz vector of S(t) f.

    With Gamma_ij = sup (c(i, sigma^j) - c(i, sigma)) the growth of
    delta_i is driven by sum_j Gamma_ji delta_j (rate at j reacting to a
    flip at i), so the propagator acts through the transpose; for
    translation-invariant rates this is the circular convolution with
    the kernel gamma_t(i - j)."""
    delta = np.asarray(delta, dtype=float)
    g = gamma_matrix(rates).matrix
    return expm(float(t) * g.T) @ delta


@dataclass
class ContractionReport:
    t: float
    k_of_t: float
    k_schur_bound: float
    epsilon: float
    m: float
    alpha: float | None
    rigid: bool
    alpha_verified: bool | None
    alpha_violation: float = 0.0


def k_of_t(gamma: np.ndarray, t: float) -> float:
    """K(t) = ||e^{t Gamma}||_{2->2}^2."""
    e = expm(float(t) * gamma)
    return float(svdvals(e)[0] ** 2)


def ergodicity_constants(rates: RateModel):
    """(epsilon, M): eps = inf (c(i, sigma) + c(i, sigma^i)), M = sup_i of the
    off-diagonal Gamma row sum."""
    eps = np.inf
    for i in rates.torus.sites():
        sites, table = rates.rate_table(i)
        dep = tuple(sorted(set(sites) | {i}))
        pats = np.arange(1 << len(dep), dtype=np.int64)

        def key_of(p):
            key = np.zeros_like(p)
            for j, s in enumerate(sites):
                key |= ((p >> np.int64(dep.index(s))) & 1) << np.int64(j)
            return key

        vals = table[key_of(pats)]
        vals_f = table[key_of(pats ^ np.int64(1 << dep.index(i)))]
        eps = min(eps, float(np.min(vals + vals_f)))
    g = gamma_matrix(rates).matrix
    off = g - np.diag(np.diag(g))
    m = float(np.max(off.sum(axis=1))) if g.size else 0.0
    return eps, m


def contraction_constants(
    rates: RateModel,
    t: float,
    verify: bool = True,
    verify_cap: int = 10,
    seed: int = 7,
) -> ContractionReport:
    """K(t), its Schur upper bound, and the decay rate alpha = 2(eps - M).

    alpha is only meaningful when M < eps; when the torus is small enough
    it is verified against the exact semigroup on random local functions
    before being reported as verified.
    """
    g = gamma_matrix(rates).matrix
    k_t = k_of_t(g, t)
    schur = float(
        np.sqrt(np.abs(g).sum(axis=0).max() * np.abs(g).sum(axis=1).max())
        if g.size
        else 0.0
    )
    k_schur = float(np.exp(2.0 * t * schur))
    eps, m = ergodicity_constants(rates)
    rigid = bool(np.all(g == 0.0))
    alpha = 2.0 * (eps - m) if m < eps else None
    verified = None
    violation = 0.0
    n = rates.torus.n_sites
    if verify and alpha is not None and n <= verify_cap:
        verified = True
        eng = engine_for(rates, cap=verify_cap)
        rng = np.random.default_rng(seed)
        for _ in range(3):
            k = int(rng.integers(1, min(3, n) + 1))
            sites = tuple(rng.choice(n, size=k, replace=False))
            f = Observable.monomial_sum(
                rates.torus, [(float(rng.normal()), sites), (float(rng.normal()), (sites[0],))]
            )
            d0 = lipschitz_vector(f)
            lhs = eng.lipschitz_of(eng.evolve_functions(f.dense_values(), t))
            gap = float(np.sum(lhs**2) - np.exp(-alpha * t) * np.sum(d0**2))
            if gap > 1e-8 * max(1.0, float(np.sum(d0**2))):
                verified = False
                violation = max(violation, gap)
    return ContractionReport(
        float(t), k_t, k_schur, eps, m, alpha, rigid, verified, violation
    )


def detailed_balance_residual(rates: RateModel, probs: np.ndarray, cap: int = EXACT_STATE_CAP) -> float:
    """max |c(i,s) mu(s) - c(i,s^i) mu(s^i)|; zero iff mu is reversible."""
    n = rates.torus.n_sites
    states = states_arange(n, cap)
    probs = np.asarray(probs, dtype=float)
    worst = 0.0
    for i in range(n):
        flipped = states ^ np.int64(1 << i)
        ci = rates.rate_values(i, states)
        cif = rates.rate_values(i, flipped)
        worst = max(worst, float(np.max(np.abs(ci * probs - cif * probs[flipped]))))
    return worst
