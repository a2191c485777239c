"""Experiment orchestration: schedules, configs, pipelines, CSV reports.

A single flat ExperimentConfig drives every pipeline (expsum | average |
chain | correlation | deviation | generate | vdc-selftest); the same keys
can come from a key=value config file with CLI flags overriding.  Reports
are written atomically as versioned CSV whose bytes depend only on the
config - never on worker count or timing - so reruns diff clean.
"""

from __future__ import annotations

import hashlib
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import correlation, dynamics, hardy, selectors

WORKERS_ENV = "ERGOLAB_WORKERS"
CSV_SCHEMA = 1
SLOPE_CLAMP_FLOOR = 1e-15


def lacunary_schedule(rho: float, n_min: int, n_max: int) -> List[int]:
    """{floor(rho^k) : k >= 0} intersected with [n_min, n_max], deduplicated.

    Lacunary schedules are the averaging parameters everywhere; convergence
    along every such schedule (rho from a sequence tending to 1) upgrades
    to full convergence for bounded observables.
    """
    if rho <= 1.0:
        raise ValueError(f"rho must exceed 1, got {rho}")
    if not 1 <= n_min <= n_max:
        raise ValueError(f"need 1 <= n_min <= n_max, got [{n_min}, {n_max}]")
    out = set()
    k = 0
    while True:
        v = math.floor(rho ** k)
        if v > n_max:
            break
        if v >= n_min:
            out.add(v)
        k += 1
    return sorted(out)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    half_width: float
    clamped: bool


def slope_fit(series: Sequence[Tuple[float, float]], clamp_floor: float = SLOPE_CLAMP_FLOOR) -> SlopeFit:
    """Least squares of log(magnitude) on log(N).

    Negative slope quantifies decay.  Exact cancellations would push
    log(0) to -inf and silently wreck the fit, so magnitudes below
    clamp_floor are clamped and flagged.  half_width is two standard
    errors of the slope (roughly a 95% interval).
    """
    if len(series) < 3:
        raise ValueError("slope fit needs at least 3 points")
    n_vals = np.array([float(n) for n, _ in series])
    mags = np.array([float(v) for _, v in series])
    if np.any(n_vals <= 0):
        raise ValueError("N values must be positive")
    if np.all(n_vals == n_vals[0]):
        raise ValueError("degenerate fit: all N equal")
    clamped = bool(np.any(mags < clamp_floor))
    mags = np.maximum(mags, clamp_floor)

    x = np.log(n_vals)
    y = np.log(mags)
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    slope = float(np.sum((x - xbar) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * xbar)
    resid = y - (intercept + slope * x)
    dof = len(series) - 2
    se = math.sqrt(float(np.sum(resid ** 2)) / dof / sxx) if dof > 0 else 0.0
    return SlopeFit(slope, intercept, 2.0 * se, clamped)


# ---------------------------------------------------------------------------
# Configuration.

PIPELINES = (
    "expsum",
    "average",
    "chain",
    "correlation",
    "deviation",
    "generate",
    "vdc-selftest",
)

_OBSERVABLE_ALIASES = {
    "e(x)": "e",
    "e": "e",
    "(1+e(x))/2": "e_shifted",
    "e_shifted": "e_shifted",
    "1": "const",
    "const": "const",
    "coboundary": "coboundary",
    "roots": "roots",
    "indicator0": "indicator0",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat parameter bundle; every field maps 1:1 to a CLI flag/file key."""

    pipeline: str = "expsum"
    a: float = 0.3
    a_values: Optional[Tuple[float, ...]] = None  # sweep overriding `a`
    eps: Optional[float] = None
    p: str = "x^(3/2)"
    rho: Tuple[float, ...] = (2.0, 1.5, 1.1)
    delta: float = 0.1
    b: Optional[float] = None
    c: Optional[float] = None
    seeds: int = 20
    seed_base: int = 0
    nmin: int = 1024
    nmax: int = 1 << 20
    bits: Optional[int] = None
    system: str = "rotation"
    alpha: str = "sqrt2m1"
    q: int = 5
    alphabet: int = 2
    window: int = 8
    f: str = "e"
    points: int = 16
    trials: int = 1000
    chernoff_c: float = 0.125
    iterms_n: Optional[int] = None
    n: Optional[int] = None
    seed: int = 0
    instances: int = 1000
    out: Optional[str] = None
    workers: Optional[int] = None

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline {self.pipeline!r}")
        for r in self.rho:
            if r <= 1.0:
                raise ValueError(f"every rho must exceed 1, got {r}")
        if self.seeds < 0:
            raise ValueError("seeds count must be >= 0")

    def seed_list(self) -> List[int]:
        return [self.seed_base + i for i in range(self.seeds)]

    def observable(self) -> str:
        key = self.f.strip()
        if key not in _OBSERVABLE_ALIASES:
            raise ValueError(f"unknown observable {self.f!r}")
        return _OBSERVABLE_ALIASES[key]

    def resolve_workers(self) -> int:
        if self.workers is not None:
            return max(1, self.workers)
        env = os.environ.get(WORKERS_ENV)
        return max(1, int(env)) if env else 1

    def fingerprint(self) -> str:
        """Stable id over everything that can affect report *content*.

        Output path and worker count are excluded on purpose: they must
        never change the bytes of the data rows.
        """
        skip = {"out", "workers"}
        parts = []
        for fld in sorted(f.name for f in fields(self)):
            if fld in skip:
                continue
            parts.append(f"{fld}={getattr(self, fld)!r}")
        digest = hashlib.sha256(";".join(parts).encode()).hexdigest()
        return digest[:12]


def parse_config_file(path: str) -> Dict[str, str]:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


_LIST_KEYS = {"rho", "a_values"}
_INT_KEYS = {
    "seeds", "seed_base", "nmin", "nmax", "bits", "q", "alphabet", "window",
    "points", "trials", "iterms_n", "n", "seed", "instances", "workers",
}
_FLOAT_KEYS = {"a", "eps", "delta", "b", "c", "chernoff_c"}


def coerce_config_values(values: Dict[str, str]) -> Dict[str, object]:
    """Parse textual config values into the types ExperimentConfig expects."""
    known = {f.name for f in fields(ExperimentConfig)}
    out: Dict[str, object] = {}
    for key, value in values.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        if value.lower() in ("none", "auto", ""):
            out[key] = None
            continue
        if key in _LIST_KEYS:
            out[key] = tuple(float(v) for v in value.split(","))
        elif key in _INT_KEYS:
            out[key] = int(value)
        elif key in _FLOAT_KEYS:
            out[key] = float(value)
        else:
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# Reports.

def _fmt(value) -> str:
    """Canonical cell text: repr for floats (shortest round trip), str else."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return str(value)


@dataclass(frozen=True)
class Table:
    name: str
    columns: Tuple[str, ...]
    rows: Tuple[Tuple, ...]


@dataclass(frozen=True)
class Report:
    """Tabular results plus the parameter fingerprint they were run under."""

    config: ExperimentConfig
    tables: Tuple[Table, ...]
    fits: Tuple[Tuple[str, SlopeFit], ...] = ()

    def table(self, name: str = "main") -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def csv_bytes(self, name: str = "main") -> bytes:
        t = self.table(name)
        lines = [f"# schema={CSV_SCHEMA}", f"# experiment={self.config.fingerprint()}"]
        skip = {"out", "workers"}
        for fld in sorted(f.name for f in fields(self.config)):
            if fld not in skip:
                lines.append(f"# {fld}={getattr(self.config, fld)}")
        lines.append(",".join(t.columns))
        for row in t.rows:
            lines.append(",".join(_fmt(v) for v in row))
        return ("\n".join(lines) + "\n").encode()

    def write(self, out: str) -> List[str]:
        """Write all tables atomically; extra tables get .<name>.csv suffixes."""
        written = []
        base = Path(out)
        for t in self.tables:
            path = base if t.name == "main" else base.with_suffix(f".{t.name}.csv")
            path.parent.mkdir(parents=True, exist_ok=True)
            payload = self.csv_bytes(t.name)
            fd, tmp = tempfile.mkstemp(dir=str(path.parent), suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(payload)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
            written.append(str(path))
        return written


# ---------------------------------------------------------------------------
# Worker fan-out.  Jobs read heavyweight shared inputs (phase tables) from a
# module global installed before the fork, so nothing large is pickled.

_SHARED: Dict[str, object] = {}


def _pool_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _resolved_expr(cfg: ExperimentConfig) -> hardy.HardyExpr:
    return hardy.parse_expression(cfg.p, epsilon_hint=cfg.eps)


def _union_schedule(cfg: ExperimentConfig) -> List[int]:
    out = set()
    for r in cfg.rho:
        out.update(lacunary_schedule(r, cfg.nmin, cfg.nmax))
    return sorted(out)


def _make_system(cfg: ExperimentConfig) -> dynamics.DynamicalSystem:
    kind = cfg.system
    if kind == "rotation":
        return dynamics.RotationSystem(cfg.alpha, cfg.observable())
    if kind == "cyclic":
        return dynamics.CyclicSystem(cfg.q, cfg.observable())
    if kind == "bernoulli":
        return dynamics.BernoulliSystem(cfg.alphabet, cfg.window)
    raise ValueError(f"unknown system {kind!r}")


# -- expsum ------------------------------------------------------------------

def _run_expsum(cfg: ExperimentConfig) -> Report:
    expr = _resolved_expr(cfg)
    if cfg.n is not None:
        union = [cfg.n]
        per_rho = {cfg.rho[0]: [cfg.n]}
    else:
        union = _union_schedule(cfg)
        per_rho = {r: lacunary_schedule(r, cfg.nmin, cfg.nmax) for r in cfg.rho}
    fr = hardy.phase_fractions(expr, union[-1], cfg.bits)
    z = hardy.unit_phases(fr)
    means = hardy.prefix_means(z, union)
    by_n = dict(zip(union, means))

    rows = []
    fits = []
    for r, sched in per_rho.items():
        series = []
        for N in sched:
            v = by_n[N]
            rows.append((cfg.fingerprint(), r, N, v.real, v.imag, abs(v)))
            series.append((N, abs(v)))
        if len(series) >= 3:
            fits.append((f"rho={r}", slope_fit(series)))
    table = Table("main", ("experiment_id", "rho", "N", "re", "im", "abs"), tuple(rows))
    return Report(cfg, (table,), tuple(fits))


# -- average -----------------------------------------------------------------

def _average_job(item: Tuple[float, int]):
    a, seed = item
    ctx = _SHARED
    union: List[int] = ctx["union"]
    positions = selectors.select_first(a, seed, union[-1])
    series = dynamics.weighted_average_from_positions(
        ctx["system"], ctx["expr"], positions, union,
        sample_points=ctx["points"], phases=ctx["phases"],
    )
    return series.values


def _run_average(cfg: ExperimentConfig) -> Report:
    expr = _resolved_expr(cfg)
    system = _make_system(cfg)
    union = _union_schedule(cfg)
    per_rho = {r: lacunary_schedule(r, cfg.nmin, cfg.nmax) for r in cfg.rho}
    points = system.sample_points(cfg.points)
    # the phase table depends on p alone, so one table serves every (a, seed)
    phases = hardy.phase_fractions(expr, union[-1], cfg.bits)

    _SHARED.clear()
    _SHARED.update(cfg=cfg, union=union, system=system, expr=expr,
                   points=points, phases=phases)
    a_list = cfg.a_values if cfg.a_values else (cfg.a,)
    seeds = cfg.seed_list()
    items = [(a, seed) for a in a_list for seed in seeds]
    results = _pool_map(_average_job, items, cfg.resolve_workers())
    _SHARED.clear()

    union_index = {N: i for i, N in enumerate(union)}
    fp = cfg.fingerprint()
    rows = []
    for (a, seed), values in zip(items, results):
        for r in cfg.rho:
            for N in per_rho[r]:
                col = union_index[N]
                for j in range(len(points)):
                    v = values[j, col]
                    rows.append((fp, a, r, seed, j, N, v.real, v.imag, abs(v)))
    table = Table(
        "main",
        ("experiment_id", "a", "rho", "seed", "sample_index", "N", "re", "im", "abs"),
        tuple(rows),
    )
    return Report(cfg, (table,))


# -- chain -------------------------------------------------------------------

def _chain_job(seed: int):
    ctx = _SHARED
    cfg: ExperimentConfig = ctx["cfg"]
    union: List[int] = ctx["union"]
    params = selectors.SelectorParams(a=cfg.a, seed=seed, n_max=union[-1])
    r = selectors.generate_realization(params)
    out = []
    for N in union:
        diag = dynamics.chain_diagnostics(
            ctx["system"], ctx["expr"], r, N,
            sample_points=ctx["points"], phases=ctx["phases"],
        )
        out.append((N, diag.s_N, diag.w_N, diag.diffs))
    return out


def _run_chain(cfg: ExperimentConfig) -> Report:
    expr = _resolved_expr(cfg)
    system = _make_system(cfg)
    union = _union_schedule(cfg)
    per_rho = {r: set(lacunary_schedule(r, cfg.nmin, cfg.nmax)) for r in cfg.rho}
    points = system.sample_points(cfg.points)
    phases = hardy.phase_fractions(expr, union[-1], cfg.bits)

    _SHARED.clear()
    _SHARED.update(cfg=cfg, union=union, system=system, expr=expr,
                   points=points, phases=phases)
    seeds = cfg.seed_list()
    results = _pool_map(_chain_job, seeds, cfg.resolve_workers())
    _SHARED.clear()

    fp = cfg.fingerprint()
    rows = []
    for seed, per_n in zip(seeds, results):
        for (N, s_N, w_N, diffs) in per_n:
            rhos = [r for r in cfg.rho if N in per_rho[r]]
            for r in rhos:
                for j in range(diffs.shape[0]):
                    rows.append(
                        (fp, r, seed, j, N, s_N, w_N) + tuple(diffs[j].tolist())
                    )
    table = Table(
        "main",
        ("experiment_id", "rho", "seed", "sample_index", "N", "s_N", "w_N",
         "d1", "d2", "d3", "d4", "d5", "d6"),
        tuple(rows),
    )
    return Report(cfg, (table,))


# -- correlation -------------------------------------------------------------

def _correlation_job(seed: int):
    ctx = _SHARED
    cfg: ExperimentConfig = ctx["cfg"]
    union: List[int] = ctx["union"]
    wp: correlation.WeightParams = ctx["wparams"]
    params = selectors.SelectorParams(a=cfg.a, seed=seed, n_max=ctx["n_need"])
    r = selectors.generate_realization(params)
    w = correlation.weight_series(r, ctx["expr"], wp, cfg.bits)

    detail = []
    ratios = correlation.c_sum_check(w, union)
    partials = correlation.summability_statistic(w, union)
    for N in union:
        for m in range(1, int(math.floor(N ** wp.b)) + 1):
            v = correlation.correlation_sum(w, N, m)
            detail.append((seed, N, m, v.real, v.imag, abs(v)))
    iterms_n = ctx["iterms_n"]
    profile = None
    if iterms_n is not None:
        m_top = int(math.floor(iterms_n ** wp.b))
        profile = [
            correlation.i_terms_profile(w, iterms_n, m) for m in range(1, m_top + 1)
        ]
    return detail, ratios, partials, profile


def _run_correlation(cfg: ExperimentConfig) -> Report:
    expr = _resolved_expr(cfg)
    union = _union_schedule(cfg)
    wp = correlation.default_weight_params(
        cfg.a, delta=cfg.delta, b=cfg.b, c_exponent=cfg.c, rho=cfg.rho[0]
    )
    iterms_n = cfg.iterms_n
    if iterms_n is None:
        candidates = [N for N in union if N <= (1 << 16)]
        iterms_n = candidates[-1] if candidates else None
    n_need = union[-1] + int(math.floor(union[-1] ** wp.b)) + 1
    if iterms_n is not None:
        n_need = max(
            n_need,
            iterms_n
            + int(math.floor(iterms_n ** wp.b))
            + int(math.floor(iterms_n ** wp.c_exponent))
            + 1,
        )

    _SHARED.clear()
    _SHARED.update(cfg=cfg, union=union, expr=expr, wparams=wp,
                   n_need=n_need, iterms_n=iterms_n)
    seeds = cfg.seed_list()
    results = _pool_map(_correlation_job, seeds, cfg.resolve_workers())
    _SHARED.clear()

    fp = cfg.fingerprint()
    detail_rows = []
    summary_rows = []
    for seed, (detail, ratios, partials, profiles) in zip(seeds, results):
        for rec in detail:
            detail_rows.append((fp,) + rec)
        for i, N in enumerate(union):
            if profiles is not None and N == iterms_n:
                worst = max(
                    (q.i1_sq + q.i2_sq + q.i3_sq) for q in profiles
                )
                i1 = max(q.i1_sq for q in profiles)
                i2 = max(q.i2_sq for q in profiles)
                i3 = max(q.i3_sq for q in profiles)
                env = correlation.profile_envelope(N, cfg.a)
            else:
                worst = i1 = i2 = i3 = env = None
            summary_rows.append(
                (fp, seed, N, ratios[i], partials[i], i1, i2, i3, env, worst)
            )
    tables = (
        Table(
            "main",
            ("experiment_id", "seed", "N", "m", "corr_re", "corr_im", "corr_abs"),
            tuple(detail_rows),
        ),
        Table(
            "summary",
            ("experiment_id", "seed", "N", "csum_ratio", "summability_partial",
             "i1_sq", "i2_sq", "i3_sq", "envelope", "max_i_sum"),
            tuple(summary_rows),
        ),
    )
    return Report(cfg, tables)


# -- deviation ---------------------------------------------------------------

def _run_deviation(cfg: ExperimentConfig) -> Report:
    params = selectors.SelectorParams(a=cfg.a, seed=cfg.seed, n_max=max(cfg.nmax, 1))
    N = cfg.n if cfg.n is not None else cfg.nmax
    rep = selectors.deviation_statistics(
        params, N, cfg.trials, chernoff_c=cfg.chernoff_c
    )
    fp = cfg.fingerprint()
    rows = [
        (fp, cfg.a, N, cfg.trials, float(A), float(f), float(e), cfg.chernoff_c)
        for A, f, e in zip(rep.thresholds, rep.frequencies, rep.envelopes)
    ]
    table = Table(
        "main",
        ("experiment_id", "a", "N", "trials", "A", "frequency", "envelope", "chernoff_c"),
        tuple(rows),
    )
    return Report(cfg, (table,))


# -- generate ----------------------------------------------------------------

def _run_generate(cfg: ExperimentConfig) -> Report:
    n_max = cfg.n if cfg.n is not None else cfg.nmax
    params = selectors.SelectorParams(a=cfg.a, seed=cfg.seed, n_max=n_max)
    r = selectors.generate_realization(params)
    fp = cfg.fingerprint()
    rows = [(fp, n + 1, int(r.bits[n])) for n in range(n_max)]
    table = Table("main", ("experiment_id", "index", "bit"), tuple(rows))
    return Report(cfg, (table,))


def load_realization_csv(path: str) -> selectors.Realization:
    """Rebuild a realization from a generate dump (header carries params)."""
    meta: Dict[str, str] = {}
    bits: List[int] = []
    with open(path, "r") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            if not line or line.startswith("experiment_id"):
                continue
            _, idx, bit = line.split(",")
            bits.append(int(bit))
    params = selectors.SelectorParams(
        a=float(meta["a"]), seed=int(meta["seed"]), n_max=len(bits)
    )
    return selectors.realization_from_bits(params, bits)


# -- vdc selftest ------------------------------------------------------------

def _run_vdc_selftest(cfg: ExperimentConfig) -> Report:
    rng = np.random.default_rng(cfg.seed)
    fp = cfg.fingerprint()
    rows = []
    for i in range(cfg.instances):
        N = int(rng.integers(1, 65))
        dim = int(rng.integers(1, 9))
        M = int(rng.integers(1, N + 1))
        V = rng.normal(size=(N, dim)) + 1j * rng.normal(size=(N, dim))
        lhs, rhs = correlation.vdc_inequality_check(V, M)
        rows.append((fp, i, N, dim, M, lhs, rhs, int(lhs <= rhs * (1 + 1e-9))))
    table = Table(
        "main",
        ("experiment_id", "instance", "N", "dim", "M", "lhs", "rhs", "ok"),
        tuple(rows),
    )
    return Report(cfg, (table,))


_RUNNERS = {
    "expsum": _run_expsum,
    "average": _run_average,
    "chain": _run_chain,
    "correlation": _run_correlation,
    "deviation": _run_deviation,
    "generate": _run_generate,
    "vdc-selftest": _run_vdc_selftest,
}


def run_experiment(cfg: ExperimentConfig) -> Report:
    """Execute the configured pipeline; write CSV atomically when cfg.out is
    set; identical configs produce byte-identical CSV at any worker count."""
    report = _RUNNERS[cfg.pipeline](cfg)
    if cfg.out:
        report.write(cfg.out)
    return report
