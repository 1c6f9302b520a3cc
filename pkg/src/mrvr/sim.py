"""Synthetic data and the Monte Carlo comparison of the two solvers.

Each replication draws one training set, fits both solvers on that same set,
and scores runtime, noise-covariance accuracy, prediction RMSE against the
noiseless functions and the number of relevance vectors. Per (V, N) cell the
medians of both methods, their difference (existing minus proposed, so
positive favours the proposed method) and a rank-sum p-value are reported.
"""

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baseline import estimate_full_covariance, fit_baseline
from .common import FitOptions
from .errors import MRVRError
from .fast import fit_fast
from .kernels import KernelConfig
from .metrics import MEASURES, EvalReport, entropy_loss, jarque_bera, quadratic_loss, rank_sum_pvalue, rmse

log = logging.getLogger(__name__)

VARIANTS = ("sinc_translations", "sinc_plus_linear")
SINC_SPACING = 2.0
LINEAR_SLOPE = 0.1
LINEAR_INTERCEPT = 0.0
EIG_RANGE = (1e-2, 1e-1)
TEST_POINTS = 1000


@dataclass
class SimConfig:
    V: int
    N: int
    U: int = 1
    width: float = 1.6
    replications: int = 11
    master_seed: int = 0
    x_range: tuple = (-10.0, 10.0)
    noise_scale: float = 1.0
    variant: str = "sinc_translations"

    def __post_init__(self):
        if self.V < 1 or self.N < 2 or self.replications < 1:
            raise ValueError("need V >= 1, N >= 2 and replications >= 1")
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be positive")
        lo, hi = self.x_range
        if not lo < hi:
            raise ValueError("x_range must be an increasing interval")
        self.x_range = (float(lo), float(hi))


@dataclass
class TrainingSet:
    X: np.ndarray
    T: np.ndarray
    Y_true: np.ndarray
    omega_true: np.ndarray


def sinc(z):
    """sin(z)/z with sinc(0) = 1 (unnormalised)."""
    return np.sinc(np.asarray(z, dtype=float) / np.pi)


def true_functions(X, V, variant="sinc_translations"):
    """Noiseless targets.

    ``sinc_translations``: column j is sinc(x - 2j) for j = 0..V-1.
    ``sinc_plus_linear`` (V = 2 only): sinc(x) and 0.1 x.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError("built-in true functions need scalar inputs (U = 1)")
        X = X[:, 0]
    if variant == "sinc_translations":
        offsets = SINC_SPACING * np.arange(V)
        return sinc(X[:, None] - offsets[None, :])
    if variant == "sinc_plus_linear":
        if V != 2:
            raise ValueError("sinc_plus_linear is defined for V = 2 only")
        return np.column_stack([sinc(X), LINEAR_SLOPE * X + LINEAR_INTERCEPT])
    raise ValueError(f"unknown variant {variant!r}")


def random_spd(V, rng, noise_scale=1.0):
    """Random covariance ``Q diag(v) Q^T``.

    Q is the orthogonal factor of a standard normal matrix; eigenvalues are
    log-uniform on [0.01, 0.1] * noise_scale^2, giving noise standard
    deviations of roughly 0.1 to 0.3 against unit-amplitude sinc functions.
    """
    Z = rng.standard_normal((V, V))
    Q, R = np.linalg.qr(Z)
    Q = Q * np.sign(np.diag(R))
    lo, hi = np.log(EIG_RANGE[0]), np.log(EIG_RANGE[1])
    v = np.exp(rng.uniform(lo, hi, size=V)) * noise_scale**2
    omega = (Q * v) @ Q.T
    return 0.5 * (omega + omega.T)


def _factor(omega):
    try:
        return np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh(omega)
        return U * np.sqrt(np.clip(w, 0.0, None))


def sample_dataset(cfg, rng, omega=None):
    """Draw one training set; ``omega`` overrides the random noise covariance."""
    lo, hi = cfg.x_range
    X = rng.uniform(lo, hi, size=(cfg.N, cfg.U))
    Y = true_functions(X, cfg.V, cfg.variant)
    omega_true = random_spd(cfg.V, rng, cfg.noise_scale) if omega is None else np.asarray(omega, dtype=float)
    E = rng.standard_normal((cfg.N, cfg.V)) @ _factor(omega_true).T
    return TrainingSet(X=X, T=Y + E, Y_true=Y, omega_true=omega_true)


def two_output_dataset(rng, N=200, noise_std=0.1, correlation=0.5):
    """The two-output example: sinc and a line, correlated noise of std ``noise_std``."""
    cfg = SimConfig(V=2, N=N, variant="sinc_plus_linear")
    omega = noise_std**2 * np.array([[1.0, correlation], [correlation, 1.0]])
    return sample_dataset(cfg, rng, omega=omega)


def eval_grid(cfg, points=TEST_POINTS):
    lo, hi = cfg.x_range
    x = np.linspace(lo, hi, points)[:, None]
    return x, true_functions(x, cfg.V, cfg.variant)


def replication_rng(master_seed, V, N, rep):
    """Independent generator for one replication of one cell."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(V, N, rep)))


def evaluate(method, data, cfg, opts, seed, grid=None):
    """Fit one method on ``data`` and score it. Raises MRVRError on fit failure."""
    kernel = KernelConfig(cfg.width)
    fit = fit_fast if method == "proposed" else fit_baseline
    t0 = time.perf_counter()
    model = fit(data.X, data.T, kernel, opts)
    elapsed = time.perf_counter() - t0
    if method == "proposed":
        omega_hat = model.omega_mp
    else:
        omega_hat = estimate_full_covariance(model, data.T, model.design(data.X))
    xg, yg = grid if grid is not None else eval_grid(cfg)
    mean, _ = model.predict(xg)
    return EvalReport(
        method_tag=method,
        seed=seed,
        runtime_seconds=elapsed,
        iterations=model.iterations,
        entropy_loss=entropy_loss(data.omega_true, omega_hat),
        quadratic_loss=quadratic_loss(data.omega_true, omega_hat),
        rmse=rmse(yg, mean),
        rv_count=model.n_relevance,
    )


@dataclass
class CellResult:
    V: int
    N: int
    replications: int
    existing: list = field(default_factory=list)
    proposed: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def n_ok(self):
        return len(self.proposed)

    @property
    def n_failed(self):
        return len(self.failures)

    @property
    def degenerate(self):
        return self.n_ok < 2

    def values(self, method, measure):
        reports = self.existing if method == "existing" else self.proposed
        return np.array([getattr(r, measure) for r in reports], dtype=float)

    def summary(self, measure):
        e = self.values("existing", measure)
        p = self.values("proposed", measure)
        if e.size == 0:
            return dict(median_existing=math.nan, median_proposed=math.nan, difference=math.nan, p_value=None)
        me, mp = float(np.median(e)), float(np.median(p))
        pval = None if self.degenerate else rank_sum_pvalue(e, p)
        return dict(median_existing=me, median_proposed=mp, difference=me - mp, p_value=pval)

    def jarque_bera(self, method, measure):
        x = self.values(method, measure)
        if x.size < 4 or np.var(x) == 0:
            return None
        return jarque_bera(x)


@dataclass
class MCReport:
    cells: list

    def rows(self):
        for cell in self.cells:
            for measure in MEASURES:
                row = dict(V=cell.V, N=cell.N, measure=measure)
                row.update(cell.summary(measure))
                row.update(n_ok=cell.n_ok, n_failed=cell.n_failed)
                yield row

    def to_csv(self, fh=None):
        cols = ["V", "N", "measure", "median_existing", "median_proposed", "difference",
                "p_value", "n_ok", "n_failed"]
        out = fh or io.StringIO()
        w = csv.DictWriter(out, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            row = dict(row)
            if row["p_value"] is None:
                row["p_value"] = ""
            for k in ("median_existing", "median_proposed", "difference", "p_value"):
                if isinstance(row[k], float):
                    row[k] = repr(row[k])
            w.writerow(row)
        return out.getvalue() if fh is None else None

    def to_text(self):
        """Aligned tables, one per measure: rows V, columns N, 'difference (p)'."""
        Vs = sorted({c.V for c in self.cells})
        Ns = sorted({c.N for c in self.cells})
        lookup = {(c.V, c.N): c for c in self.cells}
        lines = []
        for measure in MEASURES:
            lines.append(f"{measure}: median(existing) - median(proposed)  (rank-sum p)")
            header = ["V\\N"] + [str(N) for N in Ns]
            table = [header]
            for V in Vs:
                row = [str(V)]
                for N in Ns:
                    cell = lookup.get((V, N))
                    if cell is None:
                        row.append("-")
                        continue
                    s = cell.summary(measure)
                    p = "n/a" if s["p_value"] is None else f"{s['p_value']:.3g}"
                    row.append(f"{s['difference']:.4g} ({p})")
                table.append(row)
            widths = [max(len(r[k]) for r in table) for k in range(len(header))]
            for r in table:
                lines.append("  ".join(c.rjust(w) for c, w in zip(r, widths)))
            lines.append("")
        for cell in self.cells:
            note = f"V={cell.V} N={cell.N}: {cell.n_ok}/{cell.replications} replications ok"
            if cell.n_failed:
                note += f", {cell.n_failed} failed"
            if cell.degenerate:
                note += " (too few for a rank-sum test)"
            lines.append(note)
        return "\n".join(lines) + "\n"


def _run_replication(cfg, rep, opts):
    rng = replication_rng(cfg.master_seed, cfg.V, cfg.N, rep)
    data = sample_dataset(cfg, rng)
    grid = eval_grid(cfg)
    out = {}
    for method in ("existing", "proposed"):
        try:
            out[method] = evaluate(method, data, cfg, opts, rep, grid)
        except MRVRError as err:
            return rep, None, f"{method}: {err}"
    return rep, out, None


_warmed = False


def _warm_up():
    global _warmed
    if _warmed:
        return
    rng = np.random.default_rng(12345)
    data = sample_dataset(SimConfig(V=2, N=20, replications=1), rng)
    for fit in (fit_fast, fit_baseline):
        try:
            fit(data.X, data.T, KernelConfig(1.6))
        except MRVRError:
            pass
    _warmed = True


def run_mc(grid, opts=None, threads=1, progress=None):
    """Run every cell of ``grid`` (a list of SimConfig).

    Replications within a cell may run on ``threads`` worker threads; each
    owns its own generator, and results are collected in replication order
    so the report does not depend on completion order. A replication where
    either fit fails is excluded and counted in ``n_failed``.
    """
    opts = opts or FitOptions()
    _warm_up()
    cells = []
    for cfg in grid:
        cell = CellResult(V=cfg.V, N=cfg.N, replications=cfg.replications)
        reps = range(cfg.replications)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda r: _run_replication(cfg, r, opts), reps))
        else:
            results = [_run_replication(cfg, r, opts) for r in reps]
        for rep, out, err in sorted(results, key=lambda t: t[0]):
            if out is None:
                log.warning("V=%d N=%d replication %d failed: %s", cfg.V, cfg.N, rep, err)
                cell.failures.append((rep, err))
                continue
            cell.existing.append(out["existing"])
            cell.proposed.append(out["proposed"])
        if progress is not None:
            progress(cell)
        cells.append(cell)
    return MCReport(cells)
