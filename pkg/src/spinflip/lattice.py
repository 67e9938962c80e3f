"""Finite tori, bit-packed spin configurations, and local observables.

Conventions used across the package:

* Sites of a d-dimensional torus with sides (l_1, ..., l_d) are numbered
  row-major, so site ids live in range(N) with N = l_1 * ... * l_d.
* A configuration of the N spins is a single Python int: bit i set means
  spin +1 at site i, clear means -1.  State indices therefore run over
  range(2**N) and double as row/column indices of exact operators.
* An observable depends on a finite support and is tabulated over the
  2**k patterns of its support, key bit k corresponding to the k-th site
  of the sorted support (least significant bit first).
* The Lipschitz vector of f collects delta_i f = sup_sigma |f(sigma^i) -
  f(sigma)| where sigma^i flips site i.
"""

from __future__ import annotations

import math

import numpy as np

LIPSCHITZ_SUPPORT_CAP = 24
DENSE_STATE_CAP = 20


class Torus:
    """d-dimensional discrete torus with per-axis wraparound."""

    def __init__(self, sides):
        sides = tuple(int(l) for l in sides)
        if not sides or any(l < 1 for l in sides):
            raise ValueError("torus sides must be positive integers")
        self.sides = sides
        self.dim = len(sides)
        self.n_sites = math.prod(sides)
        # row-major strides: last axis fastest
        strides = [1] * self.dim
        for a in range(self.dim - 2, -1, -1):
            strides[a] = strides[a + 1] * sides[a + 1]
        self._strides = tuple(strides)

    def sites(self):
        return range(self.n_sites)

    def wrap(self, coord):
        return tuple(int(c) % l for c, l in zip(coord, self.sides))

    def site(self, coord) -> int:
        if len(coord) != self.dim:
            raise ValueError(f"expected {self.dim} coordinates, got {len(coord)}")
        return sum((int(c) % l) * s for c, l, s in zip(coord, self.sides, self._strides))

    def coord(self, site: int):
        out = []
        for l, s in zip(self.sides, self._strides):
            out.append((site // s) % l)
        return tuple(out)

    def translate(self, site: int, offset) -> int:
        base = self.coord(site)
        return self.site(tuple(b + o for b, o in zip(base, offset)))

    def distance(self, i: int, j: int) -> int:
        """Chebyshev distance with wraparound (the range metric)."""
        ci, cj = self.coord(i), self.coord(j)
        d = 0
        for a, b, l in zip(ci, cj, self.sides):
            raw = abs(a - b)
            d = max(d, min(raw, l - raw))
        return d

    def neighbors(self, site: int):
        """The 2d nearest neighbors (duplicates removed on tiny sides)."""
        out = []
        for a in range(self.dim):
            for step in (-1, 1):
                off = [0] * self.dim
                off[a] = step
                j = self.translate(site, off)
                if j != site and j not in out:
                    out.append(j)
        return out

    def __eq__(self, other):
        return isinstance(other, Torus) and other.sides == self.sides

    def __hash__(self):
        return hash(self.sides)

    def __repr__(self):
        return f"Torus{self.sides}"


class SpinConfiguration:
    """Immutable bit-packed spin assignment on a torus."""

    __slots__ = ("torus", "bits")

    def __init__(self, torus: Torus, bits: int = 0):
        if bits < 0 or bits >> torus.n_sites:
            raise ValueError("state bits out of range for this torus")
        object.__setattr__(self, "torus", torus)
        object.__setattr__(self, "bits", int(bits))

    def __setattr__(self, *a):
        raise AttributeError("SpinConfiguration is immutable")

    @classmethod
    def all_minus(cls, torus: Torus):
        return cls(torus, 0)

    @classmethod
    def all_plus(cls, torus: Torus):
        return cls(torus, (1 << torus.n_sites) - 1)

    @classmethod
    def from_spins(cls, torus: Torus, spins):
        bits = 0
        for i, s in enumerate(spins):
            if s == 1:
                bits |= 1 << i
            elif s != -1:
                raise ValueError("spins must be +-1")
        return cls(torus, bits)

    def spin(self, site: int) -> int:
        return 1 if (self.bits >> site) & 1 else -1

    def flip(self, site: int) -> "SpinConfiguration":
        return SpinConfiguration(self.torus, self.bits ^ (1 << site))

    def spins(self) -> np.ndarray:
        n = self.torus.n_sites
        out = np.empty(n, dtype=np.int8)
        for i in range(n):
            out[i] = 1 if (self.bits >> i) & 1 else -1
        return out

    def __eq__(self, other):
        return (
            isinstance(other, SpinConfiguration)
            and other.bits == self.bits
            and other.torus == self.torus
        )

    def __hash__(self):
        return hash((self.torus.sides, self.bits))

    def __repr__(self):
        pat = "".join("+" if (self.bits >> i) & 1 else "-" for i in self.torus.sites())
        return f"SpinConfiguration({pat})"


def _as_bits(state) -> int:
    if isinstance(state, SpinConfiguration):
        return state.bits
    return int(state)


def monomial_eval(state, sites) -> int:
    """Product of spins over `sites`, i.e. sigma_A evaluated at one state."""
    bits = _as_bits(state)
    minus = 0
    for i in sites:
        minus += 1 - ((bits >> i) & 1)
    return -1 if minus & 1 else 1


def states_arange(n_sites: int, cap: int = DENSE_STATE_CAP) -> np.ndarray:
    if n_sites > cap:
        raise ValueError(f"{n_sites} sites exceeds the dense-state cap {cap}")
    return np.arange(1 << n_sites, dtype=np.int64)


def monomial_values_dense(torus: Torus, sites, cap: int = DENSE_STATE_CAP) -> np.ndarray:
    """sigma_A over all 2^N states as a +-1 float vector."""
    states = states_arange(torus.n_sites, cap)
    mask = 0
    seen = set()
    for i in sites:
        if i in seen:
            raise ValueError("repeated site in monomial")
        seen.add(i)
        mask |= 1 << i
    k = len(seen)
    # sign = (-1)^(number of minus spins in A) = (-1)^(|A| - popcount)
    plus = np.bitwise_count(states & np.int64(mask)).astype(np.int64)
    return np.where((k - plus) & 1, -1.0, 1.0)


class Observable:
    """Real function of the spins in a finite support, stored as a table.

    The table has 2^k entries, k = |support|; entry at key sum_j b_j 2^j
    is the value when the j-th support site (sorted ascending) carries
    spin +1 iff b_j = 1.
    """

    def __init__(self, torus: Torus, support, table):
        support = tuple(sorted(set(int(s) for s in support)))
        for s in support:
            if not 0 <= s < torus.n_sites:
                raise ValueError(f"site {s} outside the torus")
        table = np.asarray(table, dtype=float)
        if table.shape != (1 << len(support),):
            raise ValueError("table length must be 2^|support|")
        table = table.copy()
        table.setflags(write=False)
        self.torus = torus
        self.support = support
        self.table = table

    @classmethod
    def constant(cls, torus: Torus, value: float):
        return cls(torus, (), [float(value)])

    @classmethod
    def monomial(cls, torus: Torus, sites):
        sites = tuple(sorted(set(sites)))
        k = len(sites)
        table = np.empty(1 << k)
        for key in range(1 << k):
            table[key] = -1.0 if (k - int(key).bit_count()) & 1 else 1.0
        return cls(torus, sites, table)

    @classmethod
    def monomial_sum(cls, torus: Torus, terms):
        """Sparse expansion sum_j coeff_j * sigma_{A_j}; terms = [(coeff, sites)]."""
        support = tuple(sorted({int(i) for _, sites in terms for i in sites}))
        if len(support) > LIPSCHITZ_SUPPORT_CAP:
            raise ValueError("combined support too large to tabulate")
        pos = {s: j for j, s in enumerate(support)}
        table = np.zeros(1 << len(support))
        keys = np.arange(1 << len(support), dtype=np.int64)
        for coeff, sites in terms:
            mask = 0
            for i in set(sites):
                mask |= 1 << pos[int(i)]
            k = len(set(sites))
            plus = np.bitwise_count(keys & np.int64(mask)).astype(np.int64)
            table += float(coeff) * np.where((k - plus) & 1, -1.0, 1.0)
        return cls(torus, support, table)

    @classmethod
    def from_function(cls, torus: Torus, support, fn):
        """Tabulate fn over the support patterns; fn sees a SpinConfiguration
        whose off-support spins are all -1 (fn must not depend on them)."""
        support = tuple(sorted(set(int(s) for s in support)))
        if len(support) > LIPSCHITZ_SUPPORT_CAP:
            raise ValueError("support too large to tabulate")
        table = np.empty(1 << len(support))
        for key in range(1 << len(support)):
            bits = 0
            for j, s in enumerate(support):
                if (key >> j) & 1:
                    bits |= 1 << s
            table[key] = fn(SpinConfiguration(torus, bits))
        return cls(torus, support, table)

    def key_of_state(self, state) -> int:
        bits = _as_bits(state)
        key = 0
        for j, s in enumerate(self.support):
            key |= ((bits >> s) & 1) << j
        return key

    def __call__(self, state) -> float:
        return float(self.table[self.key_of_state(state)])

    def dense_values(self, cap: int = DENSE_STATE_CAP) -> np.ndarray:
        """Values over all 2^N torus states, aligned with state indices."""
        states = states_arange(self.torus.n_sites, cap)
        key = np.zeros_like(states)
        for j, s in enumerate(self.support):
            key |= ((states >> np.int64(s)) & 1) << np.int64(j)
        return self.table[key]

    def restrict_support(self) -> "Observable":
        """Drop support sites the table does not actually depend on."""
        keep = []
        for j in range(len(self.support)):
            flip = np.arange(1 << len(self.support)) ^ (1 << j)
            if not np.array_equal(self.table, self.table[flip]):
                keep.append(j)
        if len(keep) == len(self.support):
            return self
        support = tuple(self.support[j] for j in keep)
        table = np.empty(1 << len(keep))
        for key in range(1 << len(keep)):
            full = 0
            for jj, j in enumerate(keep):
                full |= ((key >> jj) & 1) << j
            table[key] = self.table[full]
        return Observable(self.torus, support, table)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Observable.constant(self.torus, other)
        if other.torus != self.torus:
            raise ValueError("observables live on different tori")
        support = tuple(sorted(set(self.support) | set(other.support)))
        if len(support) > LIPSCHITZ_SUPPORT_CAP:
            raise ValueError("combined support too large")
        keys = np.arange(1 << len(support), dtype=np.int64)

        def lift(obs):
            key = np.zeros_like(keys)
            for j, s in enumerate(obs.support):
                jj = support.index(s)
                key |= ((keys >> np.int64(jj)) & 1) << np.int64(j)
            return obs.table[key]

        return Observable(self.torus, support, lift(self) + lift(other))

    __radd__ = __add__

    def __mul__(self, scalar):
        return Observable(self.torus, self.support, self.table * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, Observable) else -float(other))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.table)))

    def __repr__(self):
        return f"Observable(support={self.support})"


def flip(state, site: int):
    """Flip one spin; preserves the input's type (int or SpinConfiguration)."""
    if isinstance(state, SpinConfiguration):
        return state.flip(site)
    return int(state) ^ (1 << site)


def discrete_gradient(f: Observable, site: int, state) -> float:
    """nabla_i f (sigma) = f(sigma^i) - f(sigma); zero off the support."""
    if site not in f.support:
        return 0.0
    return f(flip(_as_bits(state), site)) - f(state)


def lipschitz_vector(f: Observable, cap: int = LIPSCHITZ_SUPPORT_CAP) -> np.ndarray:
    """delta f as a length-N vector; exhaustive sup over the support patterns.

    delta_i f = sup_sigma (f(sigma^i) - f(sigma)) which equals the max of
    |f(sigma^i) - f(sigma)| since flipping is an involution.
    """
    k = len(f.support)
    if k > cap:
        raise ValueError(f"support size {k} exceeds the exhaustive cap {cap}")
    out = np.zeros(f.torus.n_sites)
    keys = np.arange(1 << k)
    for j, s in enumerate(f.support):
        out[s] = float(np.max(np.abs(f.table[keys ^ (1 << j)] - f.table)))
    return out


def lipschitz_vector_dense(n_sites: int, values: np.ndarray) -> np.ndarray:
    """delta of a function given as a full 2^N state vector."""
    values = np.asarray(values, dtype=float)
    if values.shape != (1 << n_sites,):
        raise ValueError("values must enumerate all states")
    states = np.arange(1 << n_sites, dtype=np.int64)
    out = np.empty(n_sites)
    for i in range(n_sites):
        out[i] = float(np.max(np.abs(values[states ^ np.int64(1 << i)] - values)))
    return out


def lipschitz_norm(delta, p=2.0) -> float:
    """l^p norm of a Lipschitz vector (p = 1, 2, inf, or any p >= 1)."""
    delta = np.asarray(delta, dtype=float)
    if np.isinf(p):
        return float(np.max(np.abs(delta)))
    p = float(p)
    if p < 1:
        raise ValueError("p must be >= 1")
    return float(np.sum(np.abs(delta) ** p) ** (1.0 / p))


def translate_states(torus: Torus, offset, cap: int = DENSE_STATE_CAP) -> np.ndarray:
    """Permutation p of state indices induced by the lattice translation
    site i -> i + offset; p[s] carries spin_i(s) to site i + offset."""
    states = states_arange(torus.n_sites, cap)
    out = np.zeros_like(states)
    for i in torus.sites():
        j = torus.translate(i, offset)
        out |= ((states >> np.int64(i)) & 1) << np.int64(j)
    return out


def load_observable(path, torus: Torus) -> Observable:
    """Read a monomial expansion: one `coeff : i1 i2 ... ik` line per term."""
    terms = []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise ValueError(f"malformed observable line: {raw!r}")
            coeff, sites = line.split(":", 1)
            terms.append((float(coeff), tuple(int(t) for t in sites.split())))
    if not terms:
        raise ValueError(f"no terms in observable file {path}")
    return Observable.monomial_sum(torus, terms)


def save_observable(path, terms) -> None:
    with open(path, "w") as fh:
        for coeff, sites in terms:
            fh.write(f"{coeff!r} : {' '.join(str(i) for i in sites)}\n")
