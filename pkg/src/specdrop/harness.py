"""Command line, experiment configurations, sweeps, CSV output and the verification suite.

Every experiment writes RFC-4180 CSV with 17 significant digits and a
``config_hash`` column, so two runs of the same configuration produce
byte-identical files.  All tolerances live in the table below; the environment
variable ``SPECDROP_TOL_SCALE`` multiplies every one of them.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import asymptotics as asy
from .geometry import (DomainMask, GeometryError, HalfDisk, QuarterDisk, Strip, FullDisk,
                       lens_area, make_grid, mask_with_exact_volume, rasterize)
from .mixed_drop import boundary_cap, mu as mixed_mu
from .shape_opt import (DEFAULT_SEED, best_corner_quarter_disk, default_seeds, optimize_od,
                        optimize_sd, radial_symmetry_diagnostic)
from .sparse_eigen import assemble_neumann_stiffness, mass_diagonal, smallest_eigenpair
from .symmetry_iso import (alpha_symmetrize, distribution_function,
                           isoperimetric_constant_rectangle, mu_lower_bound, quarter_disk_value,
                           strip_value, strip_vs_quarter_crossover)
from .weighted_neumann import BangBangWeight, principal_eigenvalue

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# tolerance table

TOL_NEUMANN = 0.002          # λ₂ of the unit square vs π², relative
TOL_STRIP = 0.01             # strip mixed eigenvalue vs (π/2δ)², relative
TOL_DROP_VALUE = 0.03        # optimized drop vs quarter-disk formula, relative
TOL_DROP_SYMDIFF = 0.05      # symmetric difference to corner quarter disk, fraction of δ
TOL_SEED_SPREAD = 0.005      # agreement of all seeds, relative
TOL_BETA_LIMIT = 0.05        # λ(10⁴, D) >= (1 - tol) μ(D)
TOL_BETA_UPPER = 0.005       # λ(β, D) <= (1 + tol) μ(D)
TOL_SANDWICH = 0.03          # mesh slack on both sides of the sandwich
TOL_CROSSOVER = 1e-12        # analytic crossover area, absolute
TOL_MESH = 0.03              # grid eigenvalue vs closed form for curved shapes
TOL_ISOPERIMETRIC = 0.03     # μ >= (1 - tol) · lower bound
TOL_DUAL_FORMULA = 1e-10     # two expressions of the lower curvature constant
TOL_SHOOTING = 1e-9          # ball eigenvalue vs radial shooting, relative
TOL_LENS_R4 = 1.0            # |lens - two-term| / r⁴
TOL_LENS_R3 = 0.01           # fitted r³ coefficient vs -1/3, relative
TOL_RADIAL = 0.05            # radial symmetry diagnostic
TOL_CURVED = 0.05            # curved cap μ vs two-term upper expansion
TOL_PINCH = 0.10             # slack of the pinch interval
TOL_MONOTONE = 1e-9          # roundoff allowance in monotonicity checks, relative
RUNTIME_CALIBRATION = 30.0   # seconds per calibration solve
RUNTIME_DROP = 300.0         # seconds for the multi-start drop optimization
RUNTIME_CONSTANTS = 5.0      # seconds for the constants table

TOLERANCES = {name: value for name, value in globals().items()
              if name.startswith(("TOL_", "RUNTIME_"))}

TOL_SCALE_ENV = "SPECDROP_TOL_SCALE"
SMOKE_MAX_N = 64
N_MIN, N_MAX = 64, 2048
KINDS = ("beta-sweep", "delta-sweep", "drop-opt", "od-opt", "constants", "isoperimetric",
         "verify-all")
COMMANDS = {"drop-opt": "drop-opt", "od-opt": "od-opt", "beta-sweep": "beta-sweep",
            "delta-sweep": "delta-sweep", "constants": "constants",
            "isoperimetric": "isoperimetric", "verify": "verify-all"}


def tol_scale() -> float:
    raw = os.environ.get(TOL_SCALE_ENV, "1")
    try:
        s = float(raw)
    except ValueError:
        raise ConfigError(f"{TOL_SCALE_ENV}={raw!r} is not a number") from None
    if not s > 0:
        raise ConfigError(f"{TOL_SCALE_ENV} must be positive")
    return s


def tolerance(name: str, smoke: bool = False) -> float:
    """Entry of the tolerance table, scaled by the environment and doubled in smoke mode.

    Runtime budgets are not scaled.
    """
    v = TOLERANCES[name]
    if name.startswith("RUNTIME_"):
        return v
    return v * tol_scale() * (2.0 if smoke else 1.0)


# ---------------------------------------------------------------------------
# configuration

class ConfigError(ValueError):
    pass


def _floats(v) -> tuple[float, ...]:
    if isinstance(v, str):
        v = [p for p in v.split(",") if p.strip()]
    if isinstance(v, (int, float)):
        v = [v]
    try:
        return tuple(float(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot read a number list from {v!r}") from None


def _box(v) -> tuple[float, float]:
    if isinstance(v, str):
        parts = v.lower().split("x")
    else:
        parts = list(v)
    if len(parts) != 2:
        raise ConfigError(f"box must be L1xL2, got {v!r}")
    try:
        L = (float(parts[0]), float(parts[1]))
    except ValueError:
        raise ConfigError(f"box must be L1xL2, got {v!r}") from None
    if min(L) <= 0:
        raise ConfigError("box sides must be positive")
    return L


@dataclass
class ExperimentConfig:
    kind: str
    box: tuple[float, float] = (1.0, 1.0)
    n: int = 128
    betas: tuple[float, ...] = (10.0, 100.0, 1000.0, 10000.0)
    deltas: tuple[float, ...] = (0.1,)
    seed: int = DEFAULT_SEED
    out: str | None = None
    jobs: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        self.box = _box(self.box)
        self.betas = _floats(self.betas)
        self.deltas = _floats(self.deltas)
        if isinstance(self.n, bool) or int(self.n) != self.n:
            raise ConfigError(f"resolution must be an integer, got {self.n!r}")
        self.n = int(self.n)
        if not N_MIN <= self.n <= N_MAX:
            raise ConfigError(f"resolution n={self.n} outside [{N_MIN}, {N_MAX}]")
        if int(self.seed) != self.seed or not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        self.seed = int(self.seed)
        if int(self.jobs) < 1:
            raise ConfigError("jobs must be >= 1")
        self.jobs = int(self.jobs)
        area = self.box[0] * self.box[1]
        for d in self.deltas:
            if not 0 < d < area:
                raise ConfigError(f"delta={d} outside (0, {area})")
        for b in self.betas:
            for d in self.deltas:
                if not b > d / (area - d):
                    raise ConfigError(f"beta={b} <= delta/(|Ω|-delta) = {d / (area - d):.6g} "
                                      f"for delta={d}")
        try:
            make_grid(*self.box, self.n)
        except GeometryError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def config_hash(self) -> str:
        """Digest of every field that can change the numbers (not ``out`` or ``jobs``)."""
        payload = {"kind": self.kind, "box": list(self.box), "n": self.n,
                   "betas": [repr(b) for b in self.betas],
                   "deltas": [repr(d) for d in self.deltas], "seed": self.seed}
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


CONFIG_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def load_config(path: str | None, overrides: dict) -> ExperimentConfig:
    """JSON config file (optional) with command-line overrides applied on top."""
    data = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    if "kind" not in data:
        raise ConfigError("experiment kind missing")
    return ExperimentConfig(**data).validate()


# ---------------------------------------------------------------------------
# CSV

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_rows(fh, columns, rows, config_hash: str) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(list(columns) + ["config_hash"])
    for r in rows:
        w.writerow([_fmt(v) for v in r] + [config_hash])


@contextlib.contextmanager
def _open_out(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


# ---------------------------------------------------------------------------
# experiments

def _grid(cfg):
    return make_grid(*cfg.box, cfg.n)


def _sd(grid, delta, seed, jobs=1):
    return optimize_sd(grid, delta, default_seeds(grid, delta, seed), jobs=jobs)


def _od(grid, beta, delta, seed, jobs=1):
    return optimize_od(grid, beta, delta, default_seeds(grid, delta, seed), jobs=jobs)


def _drop_row(grid, delta, res):
    sd_vol, corner, _ = best_corner_quarter_disk(grid, delta, res.best_mask)
    return [delta, res.best_value, res.seed_id, res.converged, sd_vol, sd_vol / delta,
            float(corner[0]), float(corner[1]), res.best_mask.digest()]


def _run_drop_opt(cfg):
    g = _grid(cfg)
    rows = []
    for d in cfg.deltas:
        res = _sd(g, d, cfg.seed, cfg.jobs)
        rows.append(_drop_row(g, d, res) + [quarter_disk_value(d)])
    cols = ["delta", "best_value", "seed_id", "converged", "symdiff_volume", "symdiff_over_delta",
            "corner_x", "corner_y", "mask_hash", "quarter_disk_formula"]
    return cols, rows


def _run_od_opt(cfg):
    g = _grid(cfg)
    rows = []
    for d in cfg.deltas:
        for b in cfg.betas:
            res = _od(g, b, d, cfg.seed, cfg.jobs)
            rows.append([b] + _drop_row(g, d, res))
    cols = ["beta", "delta", "od_value", "seed_id", "converged", "symdiff_volume",
            "symdiff_over_delta", "corner_x", "corner_y", "mask_hash"]
    return cols, rows


def sandwich_lower(sd_wider: float, delta: float, eps: float, beta: float) -> float:
    """``sd(δ+ε) (1 - √(δ/(εβ)))²``, or 0 when the square root exceeds one."""
    s = math.sqrt(delta / (eps * beta))
    return 0.0 if s >= 1 else sd_wider * (1 - s) ** 2


def sandwich_eps(delta: float, beta: float) -> float:
    return delta * beta ** (-1 / 3)


def _beta_point(args):
    box, n, beta, delta, seed = args
    g = make_grid(*box, n)
    od = _od(g, beta, delta, seed).best_value
    eps = sandwich_eps(delta, beta)
    if delta + eps < g.area:
        wider = _sd(g, delta + eps, seed).best_value
        lower = sandwich_lower(wider, delta, eps, beta)
    else:
        lower = 0.0
    return od, lower


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def _run_beta_sweep(cfg):
    g = _grid(cfg)
    rows = []
    for d in cfg.deltas:
        sd = _sd(g, d, cfg.seed, cfg.jobs).best_value
        tasks = [(cfg.box, cfg.n, b, d, cfg.seed) for b in cfg.betas]
        for b, (od, lower) in zip(cfg.betas, _map(_beta_point, tasks, cfg.jobs)):
            rows.append([b, d, od, sd, lower, sd - od])
    return ["beta", "delta", "od_value", "sd_value", "lower_bound", "gap"], rows


def _delta_point(args):
    box, n, delta, seed = args
    g = make_grid(*box, n)
    res = _sd(g, delta, seed)
    sd_vol, _, _ = best_corner_quarter_disk(g, delta, res.best_mask)
    return res.best_value, res.seed_id, sd_vol / delta


def _run_delta_sweep(cfg):
    L1, L2 = sorted(cfg.box)
    tasks = [(cfg.box, cfg.n, d, cfg.seed) for d in cfg.deltas]
    rows = []
    for d, (v, sid, rel) in zip(cfg.deltas, _map(_delta_point, tasks, cfg.jobs)):
        K = isoperimetric_constant_rectangle(L1, L2, d)
        rows.append([d, v, sid, quarter_disk_value(d), strip_value(d, L1),
                     mu_lower_bound(d, K, 2), rel])
    return ["delta", "sd_value", "seed_id", "quarter_disk_formula", "strip_formula",
            "lower_bound", "symdiff_over_delta"], rows


def _run_isoperimetric(cfg):
    L1, L2 = sorted(cfg.box)
    rows = []
    for d in cfg.deltas:
        K = isoperimetric_constant_rectangle(L1, L2, d)
        rows.append([L1, L2, d, K, K * K, mu_lower_bound(d, K, 2)])
    return ["L1", "L2", "delta_bar", "K", "K_squared", "mu_lower_bound"], rows


def _run_constants(cfg):
    rows = []
    for N in range(2, 9):
        c = asy.constants(N)
        rows.append([N, c.omega_N, c.lambda1, c.beta_N1, c.C_under, c.C_over, c.boundary_ratio])
    return list(asy.CONSTANTS_COLUMNS), rows


RUNNERS: dict[str, Callable] = {
    "drop-opt": _run_drop_opt, "od-opt": _run_od_opt, "beta-sweep": _run_beta_sweep,
    "delta-sweep": _run_delta_sweep, "isoperimetric": _run_isoperimetric,
    "constants": _run_constants,
}


def run(cfg: ExperimentConfig) -> int:
    """Execute one experiment and write its CSV; returns the process exit status."""
    cfg.validate()
    if cfg.kind == "verify-all":
        report = verify_all(cfg.n, jobs=cfg.jobs, seed=cfg.seed)
        with _open_out(cfg.out) as fh:
            write_report_csv(report, fh, cfg.config_hash())
        return 0 if report.passed else 1
    cols, rows = RUNNERS[cfg.kind](cfg)
    with _open_out(cfg.out) as fh:
        write_rows(fh, cols, rows, cfg.config_hash())
    return 0


# ---------------------------------------------------------------------------
# verification

@dataclass
class CriterionResult:
    criterion: str
    name: str
    passed: bool
    measured: float
    expected: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        s = (f"{tag} [{self.criterion}] {self.name}: measured={self.measured:.10g} "
             f"expected={self.expected:.10g} tol={self.tolerance:.3g} ({self.seconds:.1f} s)")
        return s + (f" {self.detail}" if self.detail else "")


@dataclass
class VerifyReport:
    n: int
    smoke: bool
    results: list[CriterionResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> list[CriterionResult]:
        return [r for r in self.results if not r.passed]


def write_report_csv(report: VerifyReport, fh, config_hash: str) -> None:
    rows = [[r.criterion, r.name, r.passed, r.measured, r.expected, r.tolerance, r.seconds]
            for r in report.results]
    write_rows(fh, ["criterion", "name", "passed", "measured", "expected", "tolerance",
                    "seconds"], rows, config_hash)


class _Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def _rel(a, b):
    return abs(a - b) / abs(b)


def check_calibration(n_neumann=256, n_strip=512, smoke=False) -> list[CriterionResult]:
    out = []
    t = tolerance("TOL_NEUMANN", smoke)
    with _Clock() as c:
        g = make_grid(1.0, 1.0, n_neumann)
        r = smallest_eigenpair(assemble_neumann_stiffness(g), mass_diagonal(g),
                               deflate_constant=True)
    ok = _rel(r.value, math.pi ** 2) <= t and c.seconds <= tolerance("RUNTIME_CALIBRATION")
    out.append(CriterionResult("1a", f"Neumann lambda2 unit square n={n_neumann}", ok, r.value,
                               math.pi ** 2, t, c.seconds))
    t = tolerance("TOL_STRIP", smoke)
    delta = 0.1
    with _Clock() as c:
        g = make_grid(1.0, 1.0, n_strip)
        v = mixed_mu(rasterize(Strip("x", delta), g)).mu
    exact = (math.pi / (2 * delta)) ** 2
    ok = _rel(v, exact) <= t and c.seconds <= tolerance("RUNTIME_CALIBRATION")
    out.append(CriterionResult("1b", f"strip mixed eigenvalue delta=0.1 n={n_strip}", ok, v,
                               exact, t, c.seconds))
    return out


def check_quarter_drop(n, jobs=1, seed=DEFAULT_SEED, smoke=False):
    """Criteria 2 and 9; also returns the optimization result for later checks."""
    delta = 0.1
    g = make_grid(1.0, 1.0, n)
    with _Clock() as c:
        res = optimize_sd(g, delta, default_seeds(g, delta, seed), jobs=jobs)
    sd_vol, corner, Q = best_corner_quarter_disk(g, delta, res.best_mask)
    expected = quarter_disk_value(delta)
    vals = [p[1] for p in res.per_seed]
    spread = (max(vals) - min(vals)) / min(vals)
    out = []
    t = tolerance("TOL_DROP_SYMDIFF", smoke)
    out.append(CriterionResult("2a", "drop symmetric difference / delta", sd_vol / delta <= t,
                               sd_vol / delta, 0.0, t, c.seconds, f"corner={corner}"))
    t = tolerance("TOL_DROP_VALUE", smoke)
    out.append(CriterionResult("2b", "drop value vs quarter-disk formula",
                               _rel(res.best_value, expected) <= t, res.best_value, expected, t,
                               c.seconds, f"seed={res.seed_id}"))
    t = tolerance("TOL_SEED_SPREAD", smoke)
    out.append(CriterionResult("2c", f"agreement of {len(vals)} seeds", spread <= t, spread, 0.0,
                               t, c.seconds))
    out.append(CriterionResult("2d", "drop runtime seconds", c.seconds <= RUNTIME_DROP, c.seconds,
                               RUNTIME_DROP, 0.0, c.seconds))
    t = tolerance("TOL_RADIAL", smoke)
    diag = radial_symmetry_diagnostic(res.eigenfunction, g, corner, res.best_mask)
    out.append(CriterionResult("9", "radial symmetry of the drop eigenfunction", diag <= t, diag,
                               0.0, t, c.seconds))
    return out, res


BETA_SWEEP = (10.0, 100.0, 1000.0, 10000.0)


def check_beta_limit(n, smoke=False):
    delta = 0.1
    g = make_grid(1.0, 1.0, n)
    with _Clock() as c:
        D = mask_with_exact_volume(QuarterDisk((0.0, 0.0), 1.0), g, delta)
        m = mixed_mu(D).mu
        lams = []
        guess = None
        for b in BETA_SWEEP:
            p = principal_eigenvalue(BangBangWeight(D, b), guess=guess)
            lams.append(p.lam)
            guess = p.lam
    mono = all(b >= a * (1 - TOL_MONOTONE) for a, b in zip(lams, lams[1:]))
    t_lim = tolerance("TOL_BETA_LIMIT", smoke)
    t_up = tolerance("TOL_BETA_UPPER", smoke)
    worst = max(l / m for l in lams)
    return [
        CriterionResult("3a", "lambda(beta,D) nondecreasing in beta", mono, lams[-1], lams[0], 0.0,
                        c.seconds, "values=" + ",".join(f"{v:.8g}" for v in lams)),
        CriterionResult("3b", "lambda(1e4,D) / mu(D)", lams[-1] / m >= 1 - t_lim, lams[-1] / m,
                        1.0, t_lim, c.seconds),
        CriterionResult("3c", "max lambda(beta,D) / mu(D)", worst <= 1 + t_up, worst, 1.0, t_up,
                        c.seconds),
    ], lams


REDUCED_SEEDS = (0, 4, 8, 9)  # one corner, one edge, the center disk, one random set


def _battery(g, delta, seed, reduced):
    s = default_seeds(g, delta, seed)
    return [s[i] for i in REDUCED_SEEDS if i < len(s)] if reduced else s


def check_sandwich(n, sd_value=None, betas=(100.0, 1000.0, 10000.0), reduced=True, jobs=1,
                   seed=DEFAULT_SEED, smoke=False):
    delta = 0.1
    g = make_grid(1.0, 1.0, n)
    t = tolerance("TOL_SANDWICH", smoke)
    out, results = [], []
    with _Clock() as c:
        if sd_value is None:
            sd_value = optimize_sd(g, delta, _battery(g, delta, seed, reduced), jobs=jobs).best_value
    for b in betas:
        with _Clock() as cb:
            eps = sandwich_eps(delta, b)
            od = optimize_od(g, b, delta, _battery(g, delta, seed, reduced), jobs=jobs)
            wider = optimize_sd(g, delta + eps, _battery(g, delta + eps, seed, reduced),
                                jobs=jobs).best_value
            lower = sandwich_lower(wider, delta, eps, b)
        ok = lower * (1 - t) <= od.best_value <= sd_value * (1 + t)
        results.append(od)
        out.append(CriterionResult("4", f"sandwich beta={b:g}", ok, od.best_value, sd_value, t,
                                   cb.seconds + c.seconds, f"lower={lower:.8g}"))
    return out, results


def check_crossover(n, smoke=False):
    from scipy import special
    j = float(special.jn_zeros(0, 1)[0])
    oracle = math.pi / j ** 2
    v = strip_vs_quarter_crossover(1.0)
    t = tolerance("TOL_CROSSOVER", smoke)
    out = [CriterionResult("5a", "crossover area pi/j01^2", abs(v - oracle) <= t, v, oracle, t)]
    g = make_grid(1.0, 1.0, n)
    tm = tolerance("TOL_MESH", smoke)
    for d, strip_above in ((0.4, True), (0.6, False)):
        with _Clock() as c:
            s = mixed_mu(rasterize(Strip("x", d), g)).mu
            q = mixed_mu(mask_with_exact_volume(QuarterDisk((0.0, 0.0), 1.0), g, d)).mu
        ok = (s > q) == strip_above and _rel(q, quarter_disk_value(d)) <= tm
        out.append(CriterionResult("5b", f"strip vs quarter disk at delta={d}", ok, s - q,
                                   strip_value(d) - quarter_disk_value(d), tm, c.seconds,
                                   f"strip={s:.8g} quarter={q:.8g}"))
    return out


def random_masks(grid, count, seed, delta_max=1 / math.pi, delta_min=0.02):
    """Deterministic family of test masks: smooth random blobs and random parametric shapes."""
    from scipy import ndimage
    rng = np.random.default_rng(seed)
    masks = []
    Lx, Ly = grid.Lx, grid.Ly
    n_cells = grid.size
    while len(masks) < count:
        delta = float(rng.uniform(delta_min, delta_max))
        kind = len(masks) % 5
        try:
            if kind == 0:
                corner = [(0, 0), (Lx, 0), (0, Ly), (Lx, Ly)][rng.integers(4)]
                D = mask_with_exact_volume(QuarterDisk(corner, 1.0), grid, delta)
            elif kind == 1:
                side = rng.integers(4)
                s = float(rng.uniform(0.3, 0.7))
                c = [(s * Lx, 0), (0, s * Ly), (Lx, s * Ly), (s * Lx, Ly)][side]
                D = mask_with_exact_volume(HalfDisk(c, 1.0), grid, delta)
            elif kind == 2:
                c = (float(rng.uniform(0.35, 0.65)) * Lx, float(rng.uniform(0.35, 0.65)) * Ly)
                D = mask_with_exact_volume(FullDisk(c, 1.0), grid, delta)
            else:
                noise = rng.standard_normal(grid.shape)
                sigma = float(rng.uniform(0.05, 0.2)) / grid.h
                field_ = ndimage.gaussian_filter(noise, sigma, mode="reflect")
                k = int(round(delta / grid.cell_area))
                idx = np.argsort(-field_.ravel(), kind="stable")[:k]
                D = DomainMask.from_flat_indices(grid, idx)
        except GeometryError:
            continue
        if 0 < D.count < n_cells:
            masks.append(D)
    return masks


def check_isoperimetric(n, count=50, seed=DEFAULT_SEED, smoke=False):
    g = make_grid(1.0, 1.0, n)
    t = tolerance("TOL_ISOPERIMETRIC", smoke)
    worst = math.inf
    worst_detail = ""
    with _Clock() as c:
        for i, D in enumerate(random_masks(g, count, seed)):
            v = mixed_mu(D).mu
            bound = mu_lower_bound(D.volume, math.sqrt(math.pi / 4), 2)
            if v / bound < worst:
                worst, worst_detail = v / bound, f"mask={i} delta={D.volume:.6g}"
    return [CriterionResult("6", f"mu / isoperimetric bound, min over {count} masks",
                            worst >= 1 - t, worst, 1.0, t, c.seconds, worst_detail)]


def radial_shooting_eigenvalue(N: int) -> float:
    """First Dirichlet eigenvalue of the unit ball by shooting on the radial ODE."""
    from scipy.integrate import solve_ivp
    from scipy.optimize import brentq
    r0 = 1e-3

    def end_value(lam):
        y0 = [1 - lam * r0 ** 2 / (2 * N) + lam ** 2 * r0 ** 4 / (8 * N * (N + 2)),
              -lam * r0 / N + lam ** 2 * r0 ** 3 / (2 * N * (N + 2))]
        sol = solve_ivp(lambda r, y: [y[1], -(N - 1) / r * y[1] - lam * y[0]], (r0, 1.0), y0,
                        method="DOP853", rtol=1e-13, atol=1e-15)
        return sol.y[0, -1]

    lo, hi = 1.0, 2.0
    while end_value(hi) > 0:
        lo, hi = hi, hi * 1.5
    return brentq(end_value, lo, hi, xtol=1e-14, rtol=1e-15)


def check_constants(smoke=False):
    out = []
    with _Clock() as c:
        ordering, dual, shoot = [], [], []
        for N in range(2, 9):
            k = asy.constants(N)
            ordering.append(0 < k.C_over < k.C_under)
            dual.append(abs(k.C_under - k.c_under_closed_form()))
            shoot.append(_rel(k.lambda1, radial_shooting_eigenvalue(N)))
    td = tolerance("TOL_DUAL_FORMULA", smoke)
    ts = tolerance("TOL_SHOOTING", smoke)
    fast = c.seconds <= RUNTIME_CONSTANTS
    out.append(CriterionResult("7a", "0 < C_over < C_under for N=2..8", all(ordering) and fast,
                               float(sum(ordering)), 7.0, 0.0, c.seconds))
    out.append(CriterionResult("7b", "dual formulas for C_under", max(dual) <= td and fast,
                               max(dual), 0.0, td, c.seconds))
    out.append(CriterionResult("7c", "ball eigenvalue vs radial shooting", max(shoot) <= ts and fast,
                               max(shoot), 0.0, ts, c.seconds))
    return out


def check_lens(smoke=False):
    r = np.linspace(0.01, 0.2, 200)
    exact = np.array([lens_area(x, 1.0) for x in r])
    two = np.array([asy.expand_measure(x, 1.0, 2) for x in r])
    resid = float(np.max(np.abs(exact - two) / r ** 4))
    # fit (|D_r| - πr²/2) / r³ = c₃ + c₄ r + c₅ r²
    c5, c4, c3 = np.polyfit(r, (exact - math.pi * r ** 2 / 2) / r ** 3, 2)
    t4 = tolerance("TOL_LENS_R4", smoke)
    t3 = tolerance("TOL_LENS_R3", smoke)
    return [CriterionResult("8a", "lens residual / r^4", resid <= t4, resid, 0.0, t4),
            CriterionResult("8b", "fitted r^3 coefficient", _rel(c3, -1 / 3) <= t3, c3, -1 / 3, t3)]


def check_properties(drop=None, od_results=(), lams=None, n=128, smoke=False):
    out = []
    # descent traces
    traces = []
    if drop is not None:
        traces.append(drop.trace)
        traces.extend(t for _, t in drop.coarse_trace)
    for r in od_results:
        traces.append(r.trace)
        traces.extend(t for _, t in r.coarse_trace)
    worst = 0.0
    for tr in traces:
        v = [e.value for e in tr]
        worst = max([worst] + [(b - a) / abs(a) for a, b in zip(v, v[1:])])
    out.append(CriterionResult("10a", f"descent traces nonincreasing ({len(traces)} traces)",
                               worst <= 0.0, worst, 0.0, 0.0))
    g = make_grid(1.0, 1.0, n)
    with _Clock() as c:
        if lams is None:
            D = mask_with_exact_volume(QuarterDisk((0.0, 0.0), 1.0), g, 0.1)
            lams = [principal_eigenvalue(BangBangWeight(D, b)).lam for b in BETA_SWEEP]
    inc = min(b / a - 1 for a, b in zip(lams, lams[1:]))
    out.append(CriterionResult("10b", "monotone in beta (min relative increase)",
                               inc >= -TOL_MONOTONE, inc, 0.0, TOL_MONOTONE, c.seconds))
    with _Clock() as c:
        small = mask_with_exact_volume(QuarterDisk((0.0, 0.0), 1.0), g, 0.05)
        big = mask_with_exact_volume(QuarterDisk((0.0, 0.0), 1.0), g, 0.1)
        blob = big | mask_with_exact_volume(HalfDisk((0.5, 0.0), 1.0), g, 0.05)
        chain = [small, big, blob]
        assert small.issubset(big) and big.issubset(blob)
        lam_chain = [principal_eigenvalue(BangBangWeight(D, 100.0)).lam for D in chain]
        mu_chain = [mixed_mu(D).mu for D in chain]
    ok_l = all(b <= a * (1 + TOL_MONOTONE) for a, b in zip(lam_chain, lam_chain[1:]))
    ok_m = all(b <= a * (1 + TOL_MONOTONE) for a, b in zip(mu_chain, mu_chain[1:]))
    out.append(CriterionResult("10c", "lambda(beta, D) nonincreasing under inclusion", ok_l,
                               lam_chain[-1], lam_chain[0], TOL_MONOTONE, c.seconds))
    out.append(CriterionResult("10d", "mu(D) nonincreasing under inclusion", ok_m, mu_chain[-1],
                               mu_chain[0], TOL_MONOTONE, c.seconds))
    # equimeasurability
    u = mixed_mu(big).u
    prof = alpha_symmetrize(u, math.pi / 4, g)
    ts = np.linspace(-0.1, 1.05, 100) * u.max()
    gap = max(abs(distribution_function(u, t, g) - prof.superlevel_measure(t)) for t in ts
              if t >= 0)
    out.append(CriterionResult("10e", "equimeasurability of alpha-symmetrization",
                               gap <= g.cell_area, gap, 0.0, g.cell_area))
    # deterministic CSV
    cfg = ExperimentConfig("isoperimetric", deltas=(0.05, 0.1, 0.4)).validate()
    blobs = []
    for _ in range(2):
        buf = io.StringIO()
        cols, rows = _run_isoperimetric(cfg)
        write_rows(buf, cols, rows, cfg.config_hash())
        cols, rows = _run_constants(cfg)
        write_rows(buf, cols, rows, cfg.config_hash())
        buf.write(_drop_csv(make_grid(1.0, 1.0, 64)))
        blobs.append(buf.getvalue().encode())
    out.append(CriterionResult("10f", "byte-identical CSV on rerun", blobs[0] == blobs[1],
                               float(blobs[0] == blobs[1]), 1.0, 0.0))
    out.extend(check_curved(smoke=smoke))
    return out


def _drop_csv(g):
    res = optimize_sd(g, 0.1, default_seeds(g, 0.1)[:2])
    buf = io.StringIO()
    write_rows(buf, ["delta", "best_value", "seed_id", "converged", "symdiff_volume",
                     "symdiff_over_delta", "corner_x", "corner_y", "mask_hash"],
               [_drop_row(g, 0.1, res)], "determinism")
    return buf.getvalue()


CAP_RESOLUTION = 1024


def check_curved(n_per_unit=CAP_RESOLUTION, smoke=False):
    out = []
    c = asy.constants(2)
    t = tolerance("TOL_CURVED", smoke)
    with _Clock() as ck:
        worst = -math.inf
        for r in (0.1, 0.15, 0.2):
            D, C = boundary_cap(1.0, n_per_unit, r=r)
            worst = max(worst, mixed_mu(D, C).mu / asy.expand_mu_upper(r, 1.0, 2, c))
    out.append(CriterionResult("10g", "curved cap mu / two-term upper expansion", worst <= 1 + t,
                               worst, 1.0, t, ck.seconds))
    t = tolerance("TOL_PINCH", smoke)
    for d in (0.02, 0.01):
        with _Clock() as ck:
            D, C = boundary_cap(1.0, n_per_unit, volume=d)
            v = mixed_mu(D, C).mu
            p = asy.pinch_bounds(d, 1.0, 1.0, 2, c)
        ok = p.lower * (1 - t) <= v <= p.upper * (1 + t)
        out.append(CriterionResult("10h", f"pinch interval contains cap value at delta={d}", ok, v,
                                   0.5 * (p.lower + p.upper), t, ck.seconds,
                                   f"lower={p.lower:.8g} upper={p.upper:.8g}"))
    return out


def verify_all(n: int = 256, jobs: int = 1, seed: int = DEFAULT_SEED,
               stream=None) -> VerifyReport:
    """Run every acceptance check at resolution ``n``; ``n = 64`` is the smoke mode.

    Calibration solves always use their own fixed resolutions.  Lines are
    printed to ``stream`` as each check completes.
    """
    if isinstance(n, bool) or not N_MIN <= n <= N_MAX:
        raise ConfigError(f"resolution n={n} outside [{N_MIN}, {N_MAX}]")
    smoke = n <= SMOKE_MAX_N
    rep = VerifyReport(n, smoke)

    def emit(items):
        for r in items:
            rep.results.append(r)
            if stream is not None:
                print(r.line(), file=stream, flush=True)

    emit(check_calibration(smoke=smoke))
    items, drop = check_quarter_drop(n, jobs=jobs, seed=seed, smoke=smoke)
    emit(items)
    items, lams = check_beta_limit(n, smoke=smoke)
    emit(items)
    items, ods = check_sandwich(n, sd_value=drop.best_value, jobs=jobs, seed=seed, smoke=smoke)
    emit(items)
    emit(check_crossover(n, smoke=smoke))
    emit(check_isoperimetric(n, seed=seed, smoke=smoke))
    emit(check_constants(smoke=smoke))
    emit(check_lens(smoke=smoke))
    emit(check_properties(drop, ods, lams, n=n, smoke=smoke))
    return rep


# ---------------------------------------------------------------------------
# command line

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specdrop", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        s = sub.add_parser(cmd)
        s.add_argument("--config", help="JSON file with experiment settings")
        s.add_argument("--box", help="box sides as L1xL2 (default 1x1)")
        s.add_argument("--n", type=int, help="cells per unit length, 64..2048")
        s.add_argument("--delta", help="area or comma list of areas")
        s.add_argument("--beta", help="weight or comma list of weights")
        s.add_argument("--seed", type=int, help="64-bit seed of the random multi-start masks")
        s.add_argument("--jobs", type=int, help="worker processes")
        s.add_argument("--out", help="output CSV path (default: standard output)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"kind": COMMANDS[args.command], "box": args.box, "n": args.n,
                 "deltas": args.delta, "betas": args.beta, "seed": args.seed,
                 "jobs": args.jobs, "out": args.out}
    try:
        cfg = load_config(args.config, overrides)
        if cfg.kind == "verify-all":
            report = verify_all(cfg.n, jobs=cfg.jobs, seed=cfg.seed, stream=sys.stdout)
            if cfg.out:
                with _open_out(cfg.out) as fh:
                    write_report_csv(report, fh, cfg.config_hash())
            for r in report.failures():
                print(f"specdrop: criterion {r.criterion} failed: {r.name}: expected "
                      f"{r.expected:.10g}, actual {r.measured:.10g}, tolerance {r.tolerance:.3g}",
                      file=sys.stderr)
            return 0 if report.passed else 1
        return run(cfg)
    except ConfigError as exc:
        print(f"specdrop: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
