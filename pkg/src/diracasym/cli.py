"""Command-line experiment runner.

    python -m diracasym eig --preset constant --out run1
    python -m diracasym verify --config pair.json --out run2
    python -m diracasym --print-config --preset trig

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DiracError, DomainError
from .kernel import TriangleGrid, dump_csv, fixed_point_residual, neumann_bundle
from .potential import PotentialPair, build_potential, make_pair
from .remainders import (
    Check,
    gamma,
    Gamma,
    operator_bounds,
    product_identity,
    profile,
    remainder_bounds,
    stripe_sweep,
    transform_identity_order,
    verify_asimp,
)
from .solver import solve_direct, solve_via_kernel, uniform_grid
from .spectrum import (
    asymptotic_eigenfunction_full,
    asymptotic_eigenfunction_short,
    decay_report,
    eigenfunction,
    locate_eigenvalues,
)

log = logging.getLogger("diracasym")

COMMANDS = ("eig", "eigfun", "solve", "kernel", "remainders", "verify")
EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

PRESETS: dict[str, dict] = {
    "zero": {"sigma1": {"family": "zero"}, "sigma2": {"family": "zero"}, "p": 1.5, "n_range": [-8, 8]},
    "constant": {
        "sigma1": {"family": "constant", "value": 0.5},
        "sigma2": {"family": "constant", "value": 0.5},
        "p": 1.5,
        "n_range": [0, 32],
    },
    "trig": {
        "sigma1": {"family": "trig", "terms": [[1, 1.0, 0.0], [0, 0.3, 0.0]]},
        "sigma2": {"family": "trig", "terms": [[-2, 0.5, 0.0]]},
        "p": 1.5,
        "n_range": [-16, 16],
    },
    "power": {
        "sigma1": {"family": "power", "alpha": 0.4, "scale": 1.0},
        "sigma2": {"family": "power", "alpha": 0.4, "scale": 0.5},
        "p": 1.5,
        "n_range": [1, 256],
    },
    "step": {
        "sigma1": {"family": "indicator", "a": 0.0, "b": 0.5, "scale": 1.0},
        "sigma2": {"family": "indicator", "a": 0.25, "b": 1.0, "scale": 0.7},
        "p": 1.0,
        "n_range": [8, 128],
    },
}

IDENTITY_MU_MAX = 32.0

DEFAULT_OPTIONS = {
    "mu": [[1.0, 0.0], [10.3, 0.0], [50.0, 0.5], [200.0, 0.0]],
    "sweep": 16,
}


@dataclass(frozen=True)
class RunConfig:
    sigma1: dict
    sigma2: dict
    p: float = 1.0
    d: float = 2.0
    M_kernel: int = 512
    M_ode: int = 512
    n_range: tuple[int, int] = (1, 16)
    tail_tol: float = 1e-10
    tol: float = 1e-10
    out: str = "out"
    options: dict = field(default_factory=lambda: dict(DEFAULT_OPTIONS))

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config: expected a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        extra = sorted(set(raw) - known)
        if extra:
            raise ConfigError(f"config.{extra[0]}: unknown field")
        for key in ("sigma1", "sigma2"):
            if key not in raw:
                raise ConfigError(f"config.{key}: missing potential spec")
            if not isinstance(raw[key], dict):
                raise ConfigError(f"config.{key}: expected an object")
        kw = dict(raw)
        try:
            for key in ("p", "d", "tail_tol", "tol"):
                if key in kw:
                    kw[key] = float(kw[key])
            for key in ("M_kernel", "M_ode"):
                if key in kw:
                    if int(kw[key]) != kw[key]:
                        raise ConfigError(f"config.{key}: expected an integer")
                    kw[key] = int(kw[key])
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"config: {exc}") from exc
        if "n_range" in kw:
            nr = kw["n_range"]
            if not isinstance(nr, (list, tuple)) or len(nr) != 2:
                raise ConfigError("config.n_range: expected [n_min, n_max]")
            kw["n_range"] = (int(nr[0]), int(nr[1]))
        opts = dict(DEFAULT_OPTIONS)
        opts.update(kw.get("options", {}) or {})
        kw["options"] = opts
        kw["sigma1"] = dict(kw["sigma1"])
        kw["sigma2"] = dict(kw["sigma2"])
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not 1.0 <= self.p < 2.0:
            raise ConfigError("config.p: must satisfy 1 <= p < 2")
        if self.d <= 0:
            raise ConfigError("config.d: must be positive")
        if self.n_range[0] > self.n_range[1]:
            raise ConfigError("config.n_range: empty range")
        for key in ("tail_tol", "tol"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"config.{key}: must be positive")
        if self.M_kernel < 8:
            raise ConfigError("config.M_kernel: must be >= 8")
        if self.M_ode < 1:
            raise ConfigError("config.M_ode: must be >= 1")
        for key in ("sigma1", "sigma2"):
            try:
                build_potential(getattr(self, key), self.p)
            except ConfigError as exc:
                raise ConfigError(f"config.{key}: {exc}") from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_range"] = list(self.n_range)
        return out

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def pair(self) -> PotentialPair:
        return make_pair(build_potential(self.sigma1, self.p), build_potential(self.sigma2, self.p))

    def mus(self) -> list[complex]:
        try:
            return [complex(float(m[0]), float(m[1])) if isinstance(m, (list, tuple)) else complex(m)
                    for m in self.options["mu"]]
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"config.options.mu: {exc}") from exc


# -- output helpers --------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Collector(logging.Handler):
    def __init__(self) -> None:
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(f"{record.name}: {record.getMessage()}")


@dataclass
class RunManifest:
    command: str
    config: dict
    config_hash: str
    version: str = __version__
    stages: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    files: dict = field(default_factory=dict)

    def stage(self, name: str):
        manifest = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                manifest.stages[name] = round(time.perf_counter() - self.t0, 6)

        return _Timer()


class Run:
    def __init__(self, command: str, cfg: RunConfig, out: Path, threads: int = 1):
        self.cfg = cfg
        self.out = out
        self.threads = max(1, threads)
        self.manifest = RunManifest(command, cfg.to_dict(), cfg.hash)
        self.summary: dict = {}
        self.tables: dict = {}
        self.failed = False

    def table(self, name: str, header: list[str], rows: list, mirror: bool = True) -> None:
        path = self.out / name
        write_csv(path, header, rows)
        self.manifest.files[name] = sha256_file(path)
        if mirror:
            self.tables[name] = {"header": header, "rows": [[fmt(v) for v in r] for r in rows]}

    def map(self, fn, items):
        if self.threads == 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(fn, items))

    def bundle(self, pair):
        with self.manifest.stage("kernel"):
            return neumann_bundle(pair, TriangleGrid(self.cfg.M_kernel), self.cfg.tail_tol)


# -- commands ---------------------------------------------------------------------

EIG_HEADER = [
    "n", "re_mu", "im_mu", "re_mu0_paper", "im_mu0_paper", "re_mu0_oracle", "im_mu0_oracle",
    "re_rho", "im_rho", "gamma_pin", "Gamma_pin", "winding", "iters", "phi_residual",
]


def _eig_records(run: Run, pair):
    cfg = run.cfg
    bundle = run.bundle(pair)
    with run.manifest.stage("locate"):
        recs = locate_eigenvalues(pair, cfg.n_range, cfg.d, bundle, tol=cfg.tol)
    return bundle, recs


def cmd_eig(run: Run, pair) -> None:
    _, recs = _eig_records(run, pair)
    rows = []
    with run.manifest.stage("functionals"):
        for r in recs:
            w = math.pi * r.n
            rows.append([
                r.n, r.mu.real, r.mu.imag, r.mu0_paper.real, r.mu0_paper.imag, r.mu0.real, r.mu0.imag,
                r.rho.real, r.rho.imag, gamma(pair, w, run.cfg.M_kernel), Gamma(pair, w, run.cfg.M_kernel),
                r.box_winding, r.iterations, r.phi_residual,
            ])
    run.table("eig.csv", EIG_HEADER, rows)
    bad = [r.n for r in recs if not r.accepted]
    run.summary.update(count=len(recs), rejected=bad)
    if len([r for r in recs if r.n >= 1]) >= 32:
        rep = decay_report(recs, pair, run.cfg.M_kernel)
        run.summary["decay"] = {
            "block_medians_rho": rep.block_medians(rep.rho_abs).tolist(),
            "block_increments": rep.block_increments().tolist(),
            "sup_ratio": rep.sup_ratio,
        }
    if bad:
        log.warning("records not accepted for n = %s", bad)
        run.failed = True


def cmd_eigfun(run: Run, pair) -> None:
    bundle, recs = _eig_records(run, pair)
    M = run.cfg.M_ode
    if run.cfg.M_kernel % M:
        raise ConfigError("config.M_ode: must divide M_kernel for the eigfun command")
    x = uniform_grid(M)
    header = ["x", "re_y1", "im_y1", "re_y2", "im_y2",
              "re_full_y1", "im_full_y1", "re_full_y2", "im_full_y2",
              "re_short_y1", "im_short_y1", "re_short_y2", "im_short_y2"]
    resid = {}
    with run.manifest.stage("eigenfunctions"):
        for r in recs:
            y1, y2 = eigenfunction(pair, r, x)
            nan = np.full(x.shape, np.nan, dtype=complex)
            f1 = f2 = s1 = s2 = nan
            if r.n != 0:
                s1, s2 = asymptotic_eigenfunction_short(pair, r, x)
                try:
                    _, f1, f2 = asymptotic_eigenfunction_full(pair, bundle, r, M)
                except DomainError:
                    pass
            rows = [[x[k], y1[k].real, y1[k].imag, y2[k].real, y2[k].imag,
                     f1[k].real, f1[k].imag, f2[k].real, f2[k].imag,
                     s1[k].real, s1[k].imag, s2[k].real, s2[k].imag] for k in range(x.size)]
            run.table(f"eigfun_n{r.n}.csv", header, rows, mirror=False)
            resid[str(r.n)] = float(abs(y1[-1] - y2[-1]))
    run.summary["boundary_residual"] = resid


def cmd_solve(run: Run, pair) -> None:
    mus = run.cfg.mus()
    x = uniform_grid(run.cfg.M_ode)
    bundle = run.bundle(pair)
    header = ["x", "method", "re_mu", "im_mu"] + [f"{p}{e}" for e in ("11", "12", "21", "22") for p in ("re", "im")]
    rows = []
    agree = {}
    if run.cfg.M_kernel % run.cfg.M_ode:
        raise ConfigError("config.M_ode: must divide M_kernel for the solve command")
    with run.manifest.stage("solve"):
        direct = run.map(lambda m: solve_direct(pair, m, x=x), mus)
        kern = [solve_via_kernel(pair, bundle, m, run.cfg.M_ode) for m in mus]
    for samples in (direct, kern):
        for s in samples:
            for k in range(x.size):
                v = s.values[k].ravel()
                rows.append([x[k], s.method, s.mu.real, s.mu.imag] + [c for z in v for c in (z.real, z.imag)])
    for m, a, b in zip(mus, direct, kern):
        agree[f"{m.real:g}{m.imag:+g}j"] = a.max_diff(b)
    run.table("solve.csv", header, rows, mirror=False)
    run.summary["max_diff"] = agree


def cmd_kernel(run: Run, pair) -> None:
    bundle = run.bundle(pair)
    with run.manifest.stage("dump"):
        path = run.out / "kernel.csv"
        dump_csv(bundle.Q, path)
        run.manifest.files["kernel.csv"] = sha256_file(path)
    rep = bundle.report
    run.summary.update(
        n_terms=rep.n_terms, tail_bound=rep.tail_bound, last_term_norm=rep.last_term_norm,
        j_tilde_norm=rep.j_tilde_norm, a_priori_bound=rep.a_priori_bound, r=rep.r,
        fixed_point_residual=fixed_point_residual(pair, bundle.Q),
    )


def _check_rows(checks) -> list:
    return [[c.name, (c.mu or 0).real, (c.mu or 0).imag, c.lhs, c.rhs, c.margin, c.ok()] for c in checks]


CHECK_HEADER = ["check", "re_mu", "im_mu", "lhs", "rhs", "margin", "ok"]


def cmd_remainders(run: Run, pair) -> None:
    cfg = run.cfg
    mus = stripe_sweep(int(cfg.options["sweep"]), cfg.d)
    M_asimp = min(cfg.M_kernel, 256)
    with run.manifest.stage("profiles"):
        profs = run.map(lambda m: profile(pair, m, cfg.M_kernel, cfg.d), mus)
    with run.manifest.stage("kernel"):
        bundle = neumann_bundle(pair, TriangleGrid(M_asimp), cfg.tail_tol)
    with run.manifest.stage("bounds"):
        asimp = verify_asimp(pair, mus, cfg.d, M_asimp, bundle)
        rep = remainder_bounds(pair, mus, cfg.d, cfg.M_kernel)
    names = ["EstIm0", "EstIm100", "EstIm1", "EstIm3_n2", "EstIm3_n3"]
    rows = []
    for p in profs:
        margins = {c.name: c.margin for c in asimp.checks if c.mu == p.mu}
        rows.append([p.mu.real, p.mu.imag, p.gamma0[-1], p.gamma, p.Gamma, p.gamma1, p.gamma2]
                    + [margins[n] for n in names])
    run.table("remainders.csv",
              ["mu_re", "mu_im", "gamma0_at_1", "gamma", "Gamma", "gamma1", "gamma2"] + [f"margin_{n}" for n in names],
              rows)
    checks = asimp.checks + rep.checks
    run.table("remainder_checks.csv", CHECK_HEADER, _check_rows(checks))
    fails = [c for c in checks if not c.ok()]
    run.summary["failures"] = sorted({c.name for c in fails})
    run.failed = bool(fails)


def verify_suite(pair: PotentialPair, cfg: RunConfig, run: Run | None = None) -> list[Check]:
    """Identities, inequality margins, method agreement and decay diagnostics.

    Every item is a :class:`Check` that passes when ``lhs <= rhs``.
    """
    stage = run.manifest.stage if run else (lambda name: _Null())
    mus = stripe_sweep(int(cfg.options["sweep"]), cfg.d)
    out: list[Check] = []
    with stage("kernel"):
        bundle = neumann_bundle(pair, TriangleGrid(cfg.M_kernel), cfg.tail_tol)
    out.append(Check("fixed_point_residual", fixed_point_residual(pair, bundle.Q), 10 * cfg.tail_tol))
    with stage("identities"):
        xs = np.array([0.25, 0.5, 0.75, 1.0])
        for m in mus[:: max(1, len(mus) // 4)]:
            lhs, rhs = product_identity(pair, m, xs)
            out.append(Check("product_identity", float(np.max(np.abs(lhs - rhs))), 1e-8, m))
        # grid convergence is checked where a 128..512 ladder resolves the oscillation
        for m in [m for m in mus if abs(m) <= IDENTITY_MU_MAX][:3]:
            errs, order = transform_identity_order(pair, m)
            if not math.isnan(order):
                out.append(Check("transform_identity_order", -order, -1.8, m))
    with stage("inequalities"):
        sub = TriangleGrid(min(cfg.M_kernel, 256))
        small = bundle if sub.M == cfg.M_kernel else neumann_bundle(pair, sub, cfg.tail_tol)
        out += verify_asimp(pair, mus, cfg.d, sub.M, small).checks
        out += remainder_bounds(pair, mus, cfg.d, cfg.M_kernel).checks
        out += operator_bounds(pair, sub, small).checks
    with stage("agreement"):
        for m in cfg.mus():
            a = solve_direct(pair, m, M=cfg.M_kernel)
            b = solve_via_kernel(pair, bundle, m)
            out.append(Check("method_agreement", a.max_diff(b), 1e-6, m))
    with stage("eigenvalues"):
        recs = locate_eigenvalues(pair, cfg.n_range, cfg.d, bundle, tol=cfg.tol)
        for r in recs:
            out.append(Check("eig_accepted", float(not r.accepted), 0.0, r.mu))
        pos = [r for r in recs if r.n >= 1]
        if len(pos) >= 32:
            rep = decay_report(recs, pair, cfg.M_kernel)
            med = rep.block_medians(rep.rho_abs)
            out.append(Check("rho_block_medians_decreasing", float(np.max(np.diff(med))), 0.0))
    return out


class _Null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def cmd_verify(run: Run, pair) -> None:
    checks = verify_suite(pair, run.cfg, run)
    run.table("verify.csv", CHECK_HEADER, _check_rows(checks))
    fails = [c for c in checks if not c.ok()]
    run.summary.update(total=len(checks), failures=sorted({c.name for c in fails}))
    run.failed = bool(fails)


HANDLERS = {
    "eig": cmd_eig, "eigfun": cmd_eigfun, "solve": cmd_solve,
    "kernel": cmd_kernel, "remainders": cmd_remainders, "verify": cmd_verify,
}


# -- entry point -------------------------------------------------------------------

def load_config(path: str | None, preset: str | None) -> RunConfig:
    raw: dict = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"--preset: unknown preset {preset!r}; known: {sorted(PRESETS)}")
        raw.update(json.loads(json.dumps(PRESETS[preset])))
    if path:
        try:
            with open(path) as fh:
                raw.update(json.load(fh))
        except OSError as exc:
            raise ConfigError(f"--config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--config: invalid JSON ({exc})") from exc
    if not raw:
        raw = json.loads(json.dumps(PRESETS["zero"]))
    return RunConfig.from_dict(raw)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diracasym", description="Eigenvalue asymptotics for a 2x2 Dirac system.")
    ap.add_argument("command", nargs="?", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--preset", help=f"start from a built-in pair ({', '.join(PRESETS)})")
    ap.add_argument("--out", help="output directory (overrides config.out)")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--print-config", action="store_true", help="print the normalized config and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(command: str, cfg: RunConfig, out: Path | None = None, threads: int = 1) -> int:
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    r = Run(command, cfg, out, threads)
    collector = _Collector()
    root = logging.getLogger("diracasym")
    root.addHandler(collector)
    try:
        pair = cfg.pair()
        HANDLERS[command](r, pair)
    finally:
        root.removeHandler(collector)
    r.manifest.warnings = collector.messages
    report = {"summary": r.summary, "tables": r.tables, "manifest": asdict(r.manifest)}
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=str)
    return EXIT_VERIFY if r.failed else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.preset)
        if args.print_config:
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return EXIT_OK
        if args.command is None:
            raise ConfigError("a command is required unless --print-config is given")
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
        return run(args.command, cfg, Path(args.out) if args.out else None, args.threads)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DiracError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        log.exception("unexpected failure")
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
