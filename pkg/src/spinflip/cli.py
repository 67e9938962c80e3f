"""Command-line front end wiring the library into runnable experiments.

One entry point with subcommands; every run writes a JSON report (single
source of truth), a CSV table, and bare-column .dat files for plotting.  The
plot emitter copies numbers out of the report and never recomputes anything.
Configuration is INI-style `key = value` under bracketed sections, every key
overridable by a command-line flag; SPINFLIP_WORKERS sets the default worker
count.  Exit codes: 0 clean, 1 a checked inequality failed, 2 bad
configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np

from .concentration import (
    TestFunctionFamily,
    check_uvb,
    empirical_gcb_constant,
    hjc_check,
    hjc_library,
    product_gcb_constant,
    product_uvb_constant,
    psi_identity_check,
    theorem31_check,
    theorem52_check,
    theorem53_check,
)
from .dynamics import (
    GlauberRates,
    IndependentRates,
    PerturbedRates,
    SemigroupEngine,
    gamma_matrix,
    k_of_t,
)
from .entropy import data_processing_check, nogo_experiment
from .gibbs import (
    BoundaryCondition,
    Potential,
    dirac_vector,
    gibbs_measure,
    product_measure,
    uniform_measure,
)
from .lattice import Observable, Torus
from .mc import (
    dirac_sampler,
    ensemble_expectation,
    ensemble_exponential_moment,
    product_sampler,
    sample_path,
    vector_sampler,
)
from .symbolic import (
    GeneratorSpec,
    analyticity_radius,
    apply_chain,
    apply_generator_power,
    truncated_series,
)

DATA_DIR = Path(__file__).parent / "data"
SUBCOMMANDS = (
    "dobrushin",
    "evolve",
    "gcb-scan",
    "uvb-check",
    "conserve",
    "symbolic-bound",
    "radius",
    "nogo",
    "mc",
    "selftest",
)


class ConfigError(Exception):
    """Bad configuration; maps to exit code 2."""


class InequalityViolation(Exception):
    """A checked inequality failed; maps to exit code 1."""


def _ints(text) -> tuple:
    return tuple(int(tok) for tok in str(text).replace(",", " ").split())


def _floats(text) -> tuple:
    return tuple(float(tok) for tok in str(text).replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    sides: tuple = (8,)
    rates_kind: str = "independent"
    r: float = 1.0
    eps0: float = 0.1
    beta: float | None = None
    potential: str | None = None
    measure_kind: str = "uniform"
    p_plus: float = 0.5
    state: int = 0
    times: tuple = (0.25, 0.5, 1.0, 2.0)
    family_kind: str = "monomials"
    k_max: int = 3
    count: int = 40
    family_seed: int = 0
    seed: int = 0
    replicas: int = 2000
    workers: int | None = None
    out: str = "out"
    exact_cap: int = 12
    symbolic_n: int = 5

    # section -> [(key, field, parser)]
    LAYOUT = {
        "torus": [("sides", "sides", _ints)],
        "rates": [
            ("kind", "rates_kind", str),
            ("r", "r", float),
            ("eps0", "eps0", float),
            ("beta", "beta", float),
            ("potential", "potential", str),
        ],
        "measure": [
            ("kind", "measure_kind", str),
            ("p_plus", "p_plus", float),
            ("state", "state", lambda s: int(str(s), 0)),
        ],
        "times": [("grid", "times", _floats)],
        "family": [
            ("kind", "family_kind", str),
            ("k_max", "k_max", int),
            ("count", "count", int),
            ("seed", "family_seed", int),
        ],
        "run": [
            ("seed", "seed", int),
            ("replicas", "replicas", int),
            ("workers", "workers", int),
            ("out", "out", str),
            ("exact_cap", "exact_cap", int),
            ("symbolic_n", "symbolic_n", int),
        ],
    }

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        import configparser

        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        known = {sec: {k for k, _, _ in keys} for sec, keys in cls.LAYOUT.items()}
        values = {}
        for sec in parser.sections():
            if sec not in known:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in known[sec]:
                    raise ConfigError(f"unknown config key {key} in [{sec}]")
                _, field, parse = next(e for e in cls.LAYOUT[sec] if e[0] == key)
                try:
                    values[field] = parse(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {sec}.{key}: {raw!r}") from exc
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.parse(path.read_text())

    def serialize(self) -> str:
        lines = []
        for sec, keys in self.LAYOUT.items():
            body = []
            for key, field, _ in keys:
                value = getattr(self, field)
                if value is None:
                    continue
                if isinstance(value, tuple):
                    value = " ".join(str(v) for v in value)
                body.append(f"{key} = {value}")
            if body:
                lines.append(f"[{sec}]")
                lines.extend(body)
                lines.append("")
        return "\n".join(lines)

    def override(self, values: dict) -> "ExperimentConfig":
        return replace(self, **values)

    def effective_workers(self) -> int | None:
        if self.workers is not None:
            return self.workers
        env = os.environ.get("SPINFLIP_WORKERS")
        return int(env) if env else None


def build_torus(cfg: ExperimentConfig) -> Torus:
    if not cfg.sides or any(s < 2 for s in cfg.sides):
        raise ConfigError(f"bad torus sides {cfg.sides}")
    return Torus(cfg.sides)


def require_exact(cfg: ExperimentConfig, torus: Torus) -> None:
    if torus.n_sites > cfg.exact_cap:
        raise ConfigError(
            f"{torus.n_sites} sites exceeds the exact-enumeration cap {cfg.exact_cap}"
        )


def build_potential(cfg: ExperimentConfig) -> Potential:
    if cfg.potential is not None:
        path = Path(cfg.potential)
        if not path.exists():
            path = DATA_DIR / cfg.potential
        if not path.exists():
            raise ConfigError(f"potential file not found: {cfg.potential}")
        return Potential.load(path)
    if cfg.beta is not None:
        return Potential.ising_nn(len(cfg.sides), cfg.beta)
    raise ConfigError("need a potential file or beta for this command")


def build_rates(cfg: ExperimentConfig, torus: Torus):
    kind = cfg.rates_kind
    if kind == "independent":
        return IndependentRates(torus, cfg.r)
    if kind == "glauber":
        return GlauberRates(torus, build_potential(cfg))
    if kind == "perturbed":
        return PerturbedRates.pair(torus, cfg.eps0)
    raise ConfigError(f"unknown rates kind {kind!r}")


def build_measure(cfg: ExperimentConfig, torus: Torus) -> np.ndarray:
    kind = cfg.measure_kind
    if kind == "uniform":
        return uniform_measure(torus)
    if kind == "product":
        return product_measure(torus, cfg.p_plus)
    if kind == "dirac":
        if not 0 <= cfg.state < (1 << torus.n_sites):
            raise ConfigError(f"state {cfg.state} out of range for {torus.n_sites} sites")
        return dirac_vector(torus, cfg.state)
    if kind == "gibbs":
        return gibbs_measure(build_potential(cfg), torus).probs
    raise ConfigError(f"unknown measure kind {kind!r}")


def build_family(cfg: ExperimentConfig, torus: Torus) -> TestFunctionFamily:
    if cfg.family_kind == "monomials":
        return TestFunctionFamily.monomials(torus, cfg.k_max, max_count=cfg.count)
    if cfg.family_kind == "random":
        return TestFunctionFamily.random_combinations(
            torus, cfg.k_max, cfg.count, seed=cfg.family_seed
        )
    raise ConfigError(f"unknown family kind {cfg.family_kind!r}")


def certified_start_constant(cfg: ExperimentConfig, kind: str) -> float:
    """GCB / UVB constant of the initial measure that holds for every
    function, by measure class."""
    if cfg.measure_kind in ("uniform", "product"):
        return product_gcb_constant() if kind == "gcb" else product_uvb_constant()
    if cfg.measure_kind == "dirac":
        return 0.0
    if cfg.measure_kind == "gibbs":
        pot = build_potential(cfg)
        c = pot.dobrushin_constant()
        if c >= 1:
            raise ConfigError(
                f"Dobrushin constant {c:.6g} >= 1: no certified start constant"
            )
        gcb = pot.gcb_constant_dobrushin()
        # a Gaussian moment bound with C gives Var <= 2C per unit Lipschitz
        return gcb if kind == "gcb" else 2 * gcb
    raise ConfigError(f"unknown measure kind {cfg.measure_kind!r}")


def _g(x) -> str:
    return f"{float(x):.12g}"


# ---------------------------------------------------------------------------
# report plumbing


def new_report(command: str, cfg: ExperimentConfig) -> dict:
    return {
        "command": command,
        "generated": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": {f.name: getattr(cfg, f.name) for f in fields(cfg)},
        "table": {"columns": [], "rows": []},
        "curves": [],
        "violations": [],
    }


def emit_plot_data(report: dict, out_dir) -> list:
    """Bare whitespace-separated columns per curve, copied from the report."""
    out_dir = Path(out_dir)
    paths = []
    for curve in report.get("curves", []):
        path = out_dir / f"{curve['name']}.dat"
        with open(path, "w") as fh:
            fh.write("# " + " ".join(curve["columns"]) + "\n")
            for row in curve["rows"]:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        paths.append(path)
    return paths


def write_artifacts(report: dict, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = report["command"]
    with open(out_dir / f"{name}.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    table = report["table"]
    with open(out_dir / f"{name}.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table["columns"])
        writer.writerows(table["rows"])
    emit_plot_data(report, out_dir)


# ---------------------------------------------------------------------------
# subcommands


def cmd_dobrushin(cfg: ExperimentConfig, args) -> dict:
    pot = build_potential(cfg)
    c = pot.dobrushin_constant()
    report = new_report("dobrushin", cfg)
    report["dobrushin_c"] = c
    report["unique_regime"] = c < 1
    if c < 1:
        gcb = pot.gcb_constant_dobrushin()
        report["gcb_constant"] = gcb
        print(f"c = {_g(c)}")
        print(f"C = {_g(gcb)}")
        rows = [[cfg.potential or f"ising_nn(beta={cfg.beta})", _g(c), _g(gcb)]]
    else:
        report["gcb_constant"] = None
        print(f"c = {_g(c)}")
        print("C = n/a (c >= 1, outside the uniqueness regime)")
        rows = [[cfg.potential or f"ising_nn(beta={cfg.beta})", _g(c), ""]]
    report["table"] = {"columns": ["potential", "dobrushin_c", "gcb_constant"], "rows": rows}
    return report


def cmd_evolve(cfg: ExperimentConfig, args) -> dict:
    torus = build_torus(cfg)
    require_exact(cfg, torus)
    rates = build_rates(cfg, torus)
    mu = build_measure(cfg, torus)
    family = build_family(cfg, torus)
    engine = SemigroupEngine(rates)
    gamma = gamma_matrix(rates).matrix
    labeled = [(label, f.dense_values()) for label, f in family.labeled()]
    rows = []
    k_rows = []
    for t in cfg.times:
        mu_t = np.clip(engine.evolve_measures(mu, t), 0.0, None)
        k_rows.append([t, k_of_t(gamma, t)])
        for label, values in labeled:
            rows.append([t, label, float(mu_t @ values)])
    report = new_report("evolve", cfg)
    report["table"] = {"columns": ["t", "label", "expectation"], "rows": rows}
    report["curves"] = [{"name": "k_of_t", "columns": ["t", "value"], "rows": k_rows}]
    print(f"evolved {len(labeled)} observables over {len(cfg.times)} times")
    return report


def _scan(cfg: ExperimentConfig, args, kind: str) -> dict:
    torus = build_torus(cfg)
    require_exact(cfg, torus)
    rates = build_rates(cfg, torus)
    mu = build_measure(cfg, torus)
    family = build_family(cfg, torus)
    engine = SemigroupEngine(rates)
    check = empirical_gcb_constant if kind == "gcb" else check_uvb
    bound = args.bound
    workers = cfg.effective_workers()
    rows = []
    curve_rows = []
    violations = []
    for t in cfg.times:
        mu_t = np.clip(engine.evolve_measures(mu, t), 0.0, None)
        rep = check(mu_t, family, bound=bound, workers=workers)
        rows.append([t, rep.best_constant, rep.best_label, "" if bound is None else bound])
        curve_rows.append([t, rep.best_constant] + ([] if bound is None else [bound]))
        for v in rep.violations:
            violations.append({"t": t, **{k: v[k] for k in ("label", "lam", "ratio")}})
        print(f"t = {_g(t)}  C-hat = {_g(rep.best_constant)}  ({rep.best_label})")
    name = "gcb_hat" if kind == "gcb" else "uvb_hat"
    report = new_report("gcb-scan" if kind == "gcb" else "uvb-check", cfg)
    report["table"] = {"columns": ["t", "c_hat", "best_label", "bound"], "rows": rows}
    columns = ["t", "value"] + ([] if bound is None else ["bound"])
    report["curves"] = [{"name": name, "columns": columns, "rows": curve_rows}]
    report["violations"] = violations
    if violations:
        word = "Gaussian concentration bound" if kind == "gcb" else "uniform variance bound"
        first = violations[0]
        raise InequalityViolation(
            f"{word} violated: ratio {_g(first['ratio'])} > {_g(bound)} "
            f"at t = {_g(first['t'])} ({first['label']})",
            report,
        )
    return report


def cmd_gcb_scan(cfg, args):
    return _scan(cfg, args, "gcb")


def cmd_uvb_check(cfg, args):
    return _scan(cfg, args, "uvb")


THEOREM_NAMES = {
    "31": "exponential-moment conservation (C-hat <= D_t + K(t) C_mu)",
    "52": "variance conservation (C-hat <= C_mu K(t) + avg start constant)",
    "53": "time-integrated variance bound (Var <= 2 c-hat int K ds)",
    "hjc": "(H, J, C) conservation (int H(f - Ef) dmuS(t) <= J(C_t ||delta f||_2))",
}


def cmd_conserve(cfg: ExperimentConfig, args) -> dict:
    torus = build_torus(cfg)
    require_exact(cfg, torus)
    rates = build_rates(cfg, torus)
    family = build_family(cfg, torus)
    workers = cfg.effective_workers()
    theorem = args.theorem
    rows = []
    curve_rows = []
    failures = []
    for t in cfg.times:
        if theorem == "31":
            rep = theorem31_check(
                rates, t, build_measure(cfg, torus), family,
                certified_start_constant(cfg, "gcb"), workers=workers,
            )
        elif theorem == "52":
            rep = theorem52_check(
                rates, t, build_measure(cfg, torus), family,
                certified_start_constant(cfg, "uvb"), workers=workers,
            )
        elif theorem == "53":
            rep = theorem53_check(rates, t, family)
        else:
            spec = hjc_library(args.hjc, 1.0) if args.hjc != "abs_p" else hjc_library(
                "abs_p", float(args.hjc_p)
            )
            rep = hjc_check(rates, t, build_measure(cfg, torus), spec, family, workers=workers)
        rows.append([t, rep.k_t, rep.measured_constant, rep.composite_constant, rep.holds])
        curve_rows.append([t, rep.measured_constant, rep.composite_constant])
        if not rep.holds:
            failures.append({"t": t, "measured": rep.measured_constant, "bound": rep.composite_constant})
        print(
            f"t = {_g(t)}  measured = {_g(rep.measured_constant)}  "
            f"bound = {_g(rep.composite_constant)}  {'ok' if rep.holds else 'VIOLATED'}"
        )
    report = new_report("conserve", cfg)
    report["theorem"] = theorem
    report["table"] = {"columns": ["t", "k_t", "measured", "bound", "holds"], "rows": rows}
    report["curves"] = [
        {"name": f"theorem{theorem}", "columns": ["t", "value", "bound"], "rows": curve_rows}
    ]
    report["violations"] = failures
    if failures:
        first = failures[0]
        raise InequalityViolation(
            f"{THEOREM_NAMES[theorem]} violated: measured {_g(first['measured'])} > "
            f"bound {_g(first['bound'])} at t = {_g(first['t'])}",
            report,
        )
    return report


def _load_generator(args) -> GeneratorSpec:
    if args.gen is None:
        raise ConfigError("need --gen FILE")
    path = Path(args.gen)
    if not path.exists():
        path = DATA_DIR / args.gen
    if not path.exists():
        raise ConfigError(f"generator file not found: {args.gen}")
    return GeneratorSpec.load(path)


def _parse_sites(text: str, dim: int):
    """1D: commas and spaces both separate sites.  Higher d: spaces separate
    sites, commas separate coordinates."""
    try:
        if dim == 1:
            return [int(tok) for tok in text.replace(",", " ").split()]
        sites = []
        for tok in text.split():
            coords = tuple(int(x) for x in tok.split(","))
            if len(coords) != dim:
                raise ConfigError(f"site {tok!r} has {len(coords)} coords, generator has {dim}")
            sites.append(coords)
        return sites
    except ValueError as exc:
        raise ConfigError(f"bad site list {text!r}") from exc


def _generator_dim(gen: GeneratorSpec) -> int:
    for shape in gen.shapes:
        for off in shape:
            return len(off)
    return 1


def cmd_symbolic_bound(cfg: ExperimentConfig, args) -> dict:
    gen = _load_generator(args)
    dim = _generator_dim(gen)
    if not args.A:
        raise ConfigError("need --A SITES")
    A = _parse_sites(args.A, dim)
    n_max = cfg.symbolic_n if args.n is None else args.n
    rows = []
    json_rows = []
    violations = []
    for n in range(n_max + 1):
        result = apply_generator_power(gen, n, A)
        bound = result.loccast_bound
        if result.exact_available:
            norm, norm_kind = result.exact_sup_norm, "sup"
        else:
            norm, norm_kind = result.coeff_l1_norm, "l1"
        ratio = float(norm / bound) if bound else (0.0 if norm == 0 else float("inf"))
        rows.append([n, norm_kind, _g(norm), _g(bound), _g(ratio), result.polynomial.n_terms])
        json_rows.append(
            {
                "n": n,
                "norm_kind": norm_kind,
                "norm": str(norm),
                "bound": str(bound),
                "ratio": ratio,
                "terms": result.polynomial.n_terms,
            }
        )
        if norm > bound:
            violations.append({"n": n, "norm": str(norm), "bound": str(bound)})
        print(f"n = {n}  ||L^n sigma_A|| ({norm_kind}) = {_g(norm)}  bound = {_g(bound)}")
    t0 = analyticity_radius(gen, A)
    print(f"t0 = {t0} = {_g(t0)}")
    report = new_report("symbolic-bound", cfg)
    report["rows"] = json_rows
    report["radius"] = {"exact": str(t0), "value": float(t0)}
    report["table"] = {
        "columns": ["n", "norm_kind", "norm", "bound", "ratio", "terms"],
        "rows": rows,
    }
    report["violations"] = violations
    if violations:
        first = violations[0]
        raise InequalityViolation(
            f"iterated-generator norm bound violated: ||L^n sigma_A|| = {first['norm']} > "
            f"2^n M^n |B|^n (|A|+K)^n n! = {first['bound']} at n = {first['n']}",
            report,
        )
    return report


def cmd_radius(cfg: ExperimentConfig, args) -> dict:
    gen = _load_generator(args)
    dim = _generator_dim(gen)
    if not args.A:
        raise ConfigError("need --A SITES")
    A = _parse_sites(args.A, dim)
    t0 = analyticity_radius(gen, A)
    print(f"t0 = {t0} = {_g(t0)}")
    report = new_report("radius", cfg)
    report["radius"] = {"exact": str(t0), "value": float(t0)}
    report["table"] = {"columns": ["radius_exact", "radius"], "rows": [[str(t0), float(t0)]]}
    return report


def cmd_nogo(cfg: ExperimentConfig, args) -> dict:
    torus = build_torus(cfg)
    require_exact(cfg, torus)
    pot = build_potential(cfg)
    rates = GlauberRates(torus, pot)
    volume = tuple(torus.sites())
    plus = gibbs_measure(pot, torus, boundary=BoundaryCondition.fixed(+1), volume=volume)
    minus = gibbs_measure(pot, torus, boundary=BoundaryCondition.fixed(-1), volume=volume)
    family = build_family(cfg, torus)
    radii = _ints(args.radii) if args.radii else None
    result = nogo_experiment(rates, plus.probs, minus.probs, cfg.times, family, radii=radii)
    rows = []
    for row in result.rows:
        for radius in result.radii:
            rows.append(
                [row["t"], row["tv"], row["entropy"], row["gcb_hat"], radius, row["profile"][radius]]
            )
    report = new_report("nogo", cfg)
    report["degenerate"] = result.degenerate
    report["min_tv"] = result.min_tv
    report["max_density"] = result.max_density
    report["summary"] = result.summary
    report["table"] = {
        "columns": ["t", "tv", "entropy", "gcb_hat", "radius", "h_per_site"],
        "rows": rows,
    }
    report["curves"] = [
        {"name": "tv", "columns": ["t", "value"], "rows": [[r["t"], r["tv"]] for r in result.rows]},
        {
            "name": "entropy",
            "columns": ["t", "value"],
            "rows": [[r["t"], r["entropy"]] for r in result.rows],
        },
    ]
    print(result.summary)
    return report


def cmd_mc(cfg: ExperimentConfig, args) -> dict:
    torus = build_torus(cfg)
    rates = build_rates(cfg, torus)
    sites = _parse_sites(args.sites, 1) if args.sites else [0]
    for s in sites:
        if not 0 <= s < torus.n_sites:
            raise ConfigError(f"observable site {s} out of range")
    f = Observable.monomial(torus, sites)
    kind = cfg.measure_kind
    if kind == "dirac":
        sampler = dirac_sampler(cfg.state)
    elif kind == "uniform":
        sampler = product_sampler(torus, 0.5)
    elif kind == "product":
        sampler = product_sampler(torus, cfg.p_plus)
    elif kind == "gibbs":
        require_exact(cfg, torus)
        sampler = vector_sampler(gibbs_measure(build_potential(cfg), torus).probs)
    else:
        raise ConfigError(f"unknown measure kind {kind!r}")
    t = args.t if args.t is not None else max(cfg.times)
    workers = cfg.effective_workers()
    mean = ensemble_expectation(rates, sampler, t, f, cfg.replicas, cfg.seed, workers)
    moment = ensemble_exponential_moment(rates, sampler, t, f, cfg.replicas, cfg.seed, workers)
    rows = [
        ["mean", mean.estimate, mean.std_error, ""],
        ["exponential-moment", moment.estimate, moment.std_error, moment.raw_estimate],
    ]
    report = new_report("mc", cfg)
    report["t"] = t
    report["observable"] = {"sites": sites}
    report["estimates"] = {
        "mean": {"estimate": mean.estimate, "std_error": mean.std_error},
        "exponential_moment": {
            "estimate": moment.estimate,
            "std_error": moment.std_error,
            "raw_estimate": moment.raw_estimate,
        },
        "replicas": cfg.replicas,
        "seed": cfg.seed,
    }
    report["table"] = {"columns": ["kind", "estimate", "std_error", "raw"], "rows": rows}
    print(f"mean = {_g(mean.estimate)} +- {_g(mean.std_error)}")
    print(f"log-moment = {_g(moment.estimate)} +- {_g(moment.std_error)}")
    return report


# ---------------------------------------------------------------------------
# selftest: one fast deterministic check per module


def _check(name, fn, failures):
    try:
        msg = fn()
    except Exception as exc:
        msg = f"{type(exc).__name__}: {exc}"
    status = "PASS" if msg is None else "FAIL"
    print(f"{status}  {name}" + (f"  ({msg})" if msg else ""))
    if msg is not None:
        failures.append({"check": name, "detail": msg})
    return [name, status, msg or ""]


def cmd_selftest(cfg: ExperimentConfig, args) -> dict:
    from .lattice import monomial_eval
    from .symbolic import DeltaTail, GeometricTail, infinite_range_bound

    rows = []
    failures = []

    def lattice_product():
        rng = np.random.default_rng(0)
        for _ in range(100):
            g = tuple(rng.choice(9, size=3, replace=False))
            h = tuple(rng.choice(9, size=2, replace=False))
            state = int(rng.integers(0, 1 << 9))
            sym = sorted(set(g) ^ set(h))
            if monomial_eval(state, g) * monomial_eval(state, h) != monomial_eval(state, sym):
                return "sigma_G sigma_F != sigma_{G delta F}"

    def dobrushin_formula():
        pot = Potential.ising_nn(1, 0.2)
        if abs(pot.dobrushin_constant() - 0.4) > 1e-12:
            return "c(U) != 2 beta for 1D nearest-neighbor Ising"
        if abs(pot.gcb_constant_dobrushin() - 1 / (2 * 0.6**2)) > 1e-12:
            return "GCB constant != 1/(2(1-c)^2)"

    def spectral_law():
        torus = Torus((6,))
        engine = SemigroupEngine(IndependentRates(torus, 1.0))
        f = Observable.monomial(torus, [1, 4]).dense_values()
        mu = product_measure(torus, 0.7)
        for t in (0.3, 1.1):
            gap = abs(float(engine.evolve_measures(mu, t) @ f) - np.exp(-4 * t) * float(mu @ f))
            if gap > 1e-10:
                return f"independent-spectral law off by {gap:.2e}"

    def chain_bound_sweep():
        rng = np.random.default_rng(2)
        for _ in range(60):
            a = [int(s) for s in rng.choice(12, size=rng.integers(1, 4), replace=False)]
            shapes = [
                [int(s) for s in rng.choice(5, size=rng.integers(1, 4), replace=False)]
                for _ in range(rng.integers(1, 4))
            ]
            result = apply_chain(shapes, a)
            if result.exact_sup_norm is not None and result.exact_sup_norm > result.lemma_bound:
                return "iterated-commutator sup norm exceeds its product bound"

    def series_vs_semigroup():
        gen = GeneratorSpec.load(DATA_DIR / "nn_decay.gen")
        t0 = float(analyticity_radius(gen, [0]))
        series = truncated_series(gen, t0 / 2, [0], 8)
        torus = Torus((12,))
        from .dynamics import CustomRates
        from .symbolic import realize_polynomial

        n = torus.n_sites

        def rate_fn(i, bits):
            right = 1.0 if (bits >> ((i + 1) % n)) & 1 else -1.0
            return 1.0 + 0.3 * right

        rates = CustomRates(
            torus, lambda i: ((i % n), ((i + 1) % n)), rate_fn, translation_invariant=True
        )
        engine = SemigroupEngine(rates)
        f = Observable.monomial(torus, [0]).dense_values()
        exact = engine.evolve_functions(f, t0 / 2)
        approx = realize_polynomial(series.coeffs, torus)
        gap = float(np.max(np.abs(exact - approx)))
        if gap > series.remainder_bound + 1e-8:
            return f"series gap {gap:.2e} exceeds remainder bound {series.remainder_bound:.2e}"

    def product_gcb_window():
        torus = Torus((6,))
        family = TestFunctionFamily.monomials(torus, 2)
        rep = empirical_gcb_constant(uniform_measure(torus), family, bound=product_gcb_constant())
        if not rep.holds:
            return "uniform product measure exceeds the certified GCB constant 1/8"

    def psi_identity():
        torus = Torus((5,))
        rates = GlauberRates(torus, Potential.ising_nn(1, 0.3))
        f = Observable.monomial(torus, [0, 2])
        rep = psi_identity_check(rates, 0.5, f, steps=64)
        if rep.gap > 1e-5:
            return f"variance variation-of-constants identity gap {rep.gap:.2e}"

    def conservation_pipeline():
        torus = Torus((6,))
        rates = IndependentRates(torus, 1.0)
        family = TestFunctionFamily.monomials(torus, 2)
        mu = uniform_measure(torus)
        r31 = theorem31_check(rates, 0.5, mu, family, product_gcb_constant())
        r52 = theorem52_check(rates, 0.5, mu, family, product_uvb_constant())
        r53 = theorem53_check(rates, 0.5, family)
        for rep, label in ((r31, "3.1"), (r52, "5.2"), (r53, "5.3")):
            if not rep.holds:
                return f"conservation bound {label} violated at t = 0.5"

    def entropy_monotone():
        torus = Torus((5,))
        rates = GlauberRates(torus, Potential.ising_nn(1, 0.4))
        rng = np.random.default_rng(3)
        mu = rng.random(32)
        mu /= mu.sum()
        nu = rng.random(32)
        nu /= nu.sum()
        rep = data_processing_check(rates, mu, nu, np.linspace(0.0, 2.0, 9))
        if not rep.monotone:
            return "relative entropy increased along the semigroup"

    def combinatorial_lemma():
        rep = infinite_range_bound(GeometricTail(2.0, 1.0), c=1.0, u=1.0, A=[0], n=3)
        if not rep.holds:
            return "infinite-range combinatorial bound violated"
        rep = infinite_range_bound(DeltaTail(1, 1.0), c=0.5, u=1.0, A=[0, 1], n=2)
        if not rep.holds:
            return "infinite-range combinatorial bound violated (delta tail)"

    def mc_cross_check():
        torus = Torus((6,))
        rates = GlauberRates(torus, Potential.ising_nn(1, 0.3))
        f = Observable.monomial(torus, [0])
        est = ensemble_expectation(rates, dirac_sampler(0), 0.5, f, replicas=2000, seed=7)
        exact = float(SemigroupEngine(rates).evolve_functions(f.dense_values(), 0.5)[0])
        if abs(est.estimate - exact) > 3 * est.std_error:
            return f"MC estimate {est.estimate:.4f} misses exact {exact:.4f} by > 3 SE"

    def path_consistency():
        torus = Torus((3, 3))
        rates = GlauberRates(torus, Potential.ising_nn(2, 0.5))
        traj = sample_path(rates, 0b101010101, 1.5, seed=11)
        state = traj.start
        for s in traj.sites:
            state ^= 1 << int(s)
        if state != traj.final_state:
            return "replayed flips disagree with the final state"
        fresh = np.array([rates.rate(i, state) for i in range(9)])
        if not np.array_equal(traj.final_rates, fresh):
            return "incrementally maintained rates drifted from a fresh recomputation"

    checks = [
        ("monomial product is symmetric difference", lattice_product),
        ("Dobrushin constant and uniqueness-regime GCB formula", dobrushin_formula),
        ("independent-dynamics spectral law", spectral_law),
        ("iterated-generator norm bounds (exact rational)", chain_bound_sweep),
        ("truncated series vs uniformization", series_vs_semigroup),
        ("certified product GCB constant", product_gcb_window),
        ("variance variation-of-constants identity", psi_identity),
        ("theorem31 / theorem52 / theorem53 pipeline", conservation_pipeline),
        ("relative-entropy data processing", entropy_monotone),
        ("infinite-range combinatorial lemma", combinatorial_lemma),
        ("kinetic MC against the exact semigroup", mc_cross_check),
        ("trajectory replay and rate maintenance", path_consistency),
    ]
    for name, fn in checks:
        rows.append(_check(name, fn, failures))
    report = new_report("selftest", cfg)
    report["table"] = {"columns": ["check", "status", "detail"], "rows": rows}
    report["violations"] = failures
    print(f"{len(checks) - len(failures)}/{len(checks)} checks passed")
    if failures:
        raise InequalityViolation(failures[0]["detail"], report)
    return report


# ---------------------------------------------------------------------------
# argument parsing and dispatch

HANDLERS = {
    "dobrushin": cmd_dobrushin,
    "evolve": cmd_evolve,
    "gcb-scan": cmd_gcb_scan,
    "uvb-check": cmd_uvb_check,
    "conserve": cmd_conserve,
    "symbolic-bound": cmd_symbolic_bound,
    "radius": cmd_radius,
    "nogo": cmd_nogo,
    "mc": cmd_mc,
    "selftest": cmd_selftest,
}

# flag dest -> (config field, parser applied to the raw string)
OVERRIDE_FIELDS = {
    "sides": ("sides", _ints),
    "rates": ("rates_kind", str),
    "r": ("r", float),
    "eps0": ("eps0", float),
    "beta": ("beta", float),
    "potential": ("potential", str),
    "measure": ("measure_kind", str),
    "p_plus": ("p_plus", float),
    "state": ("state", lambda s: int(str(s), 0)),
    "times": ("times", _floats),
    "family": ("family_kind", str),
    "k_max": ("k_max", int),
    "count": ("count", int),
    "family_seed": ("family_seed", int),
    "seed": ("seed", int),
    "replicas": ("replicas", int),
    "workers": ("workers", int),
    "out": ("out", str),
    "exact_cap": ("exact_cap", int),
    "symbolic_n": ("symbolic_n", int),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; flags override its keys")
    common.add_argument("--sides", help="torus side lengths, e.g. '8' or '4 4'")
    common.add_argument("--rates", choices=["independent", "glauber", "perturbed"])
    common.add_argument("--r", type=float, help="independent flip rate")
    common.add_argument("--eps0", type=float, help="perturbation size for perturbed rates")
    common.add_argument("--beta", type=float, help="nearest-neighbor Ising inverse temperature")
    common.add_argument("--potential", help="potential file (bundled names resolve too)")
    common.add_argument("--measure", choices=["uniform", "product", "dirac", "gibbs"])
    common.add_argument("--p-plus", dest="p_plus", type=float)
    common.add_argument("--state", help="packed spin state for dirac, e.g. 0b1010 or 5")
    common.add_argument("--times", help="time grid, e.g. '0.25 0.5 1 2'")
    common.add_argument("--family", choices=["monomials", "random"])
    common.add_argument("--k-max", dest="k_max", type=int)
    common.add_argument("--count", type=int)
    common.add_argument("--family-seed", dest="family_seed", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--replicas", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help="output directory for JSON/CSV/plot files")
    common.add_argument("--exact-cap", dest="exact_cap", type=int)
    common.add_argument("--symbolic-n", dest="symbolic_n", type=int)

    parser = argparse.ArgumentParser(
        prog="spinflip",
        description="spin-flip dynamics experiments: exact semigroups, "
        "concentration and entropy diagnostics, symbolic bounds, kinetic MC",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("dobrushin", parents=[common], help="oscillation constant and GCB pipeline")
    sub.add_parser("evolve", parents=[common], help="family expectations along the semigroup")
    scan = sub.add_parser("gcb-scan", parents=[common], help="empirical GCB constant over a t-grid")
    scan.add_argument("--bound", type=float, help="fail (exit 1) if C-hat exceeds this")
    uvb = sub.add_parser("uvb-check", parents=[common], help="empirical variance constant over a t-grid")
    uvb.add_argument("--bound", type=float, help="fail (exit 1) if the ratio exceeds this")
    conserve = sub.add_parser("conserve", parents=[common], help="conservation-theorem pipelines")
    conserve.add_argument("--theorem", choices=["31", "52", "53", "hjc"], required=True)
    conserve.add_argument("--hjc", default="square", choices=["square", "exponential", "abs_p"])
    conserve.add_argument("--hjc-p", dest="hjc_p", type=float, default=4.0)
    symbolic = sub.add_parser("symbolic-bound", parents=[common], help="iterated-generator norms vs bounds")
    symbolic.add_argument("--gen", help="generator spec file")
    symbolic.add_argument("--A", help="monomial sites, e.g. '0,1' (1D) or '0,0 1,0' (2D)")
    symbolic.add_argument("--n", type=int, help="highest power (default: run.symbolic_n)")
    radius = sub.add_parser("radius", parents=[common], help="analyticity radius of the series")
    radius.add_argument("--gen", help="generator spec file")
    radius.add_argument("--A", help="monomial sites")
    nogo = sub.add_parser("nogo", parents=[common], help="plus/minus boundary distinguishability")
    nogo.add_argument("--radii", help="window radii, e.g. '0 1 2'")
    mc = sub.add_parser("mc", parents=[common], help="kinetic Monte Carlo estimates")
    mc.add_argument("--sites", help="observable monomial sites, e.g. '0 2'")
    mc.add_argument("--t", type=float, help="time horizon (default: max of the grid)")
    sub.add_parser("selftest", parents=[common], help="fast invariant suite, one check per module")
    return parser


def effective_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for dest, (field, parse) in OVERRIDE_FIELDS.items():
        raw = getattr(args, dest, None)
        if raw is None:
            continue
        try:
            overrides[field] = parse(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for --{dest.replace('_', '-')}: {raw!r}") from exc
    return cfg.override(overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = effective_config(args)
        report = HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InequalityViolation as exc:
        message, report = exc.args
        write_artifacts(report, report["config"]["out"])
        print(f"violation: {message}", file=sys.stderr)
        return 1
    write_artifacts(report, cfg.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
