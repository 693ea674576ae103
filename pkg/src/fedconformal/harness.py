"""Monte Carlo experiments: scenario configs, trials, sweeps and export.

Every trial owns a child of the scenario ``SeedSequence`` and splits it into
independent streams for data, fading and receiver noise. Methods evaluated
with the same seed therefore see the same data and channels, which keeps
method-to-method comparisons free of sampling noise.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelRealization, draw_rayleigh_gains, snr_from_db
from .conformal import PredictionBatch, cp_batch, quantized_cp_batch
from .fedqq import InfeasibleLevels, dqq_round, fedqq_batch, optimize_levels
from .scores import Quantizer, ScoreTable, generate_synthetic, read_probs_csv, table_from_probs
from .wfcp import InfeasibleCorrection, wfcp_round

SCHEMA_VERSION = 1

METHODS = ("centralized", "quantized", "fedqq_noiseless", "dqq", "wfcp", "wfcp_naive")
GUARANTEED_METHODS = frozenset(METHODS) - {"wfcp_naive"}
SWEEPABLE = ("alpha", "M", "T", "K", "N_d", "snr_db", "h_min_sq")

CSV_COLUMNS = ("method", "alpha", "M", "T", "K", "snr_db", "h_min_sq", "coverage",
               "coverage_se", "ineff", "ineff_norm", "ineff_se", "trials", "flags")


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    """Parameters of one Monte Carlo scenario.

    Data come from the Dirichlet generator unless ``calib_csv`` is set, in
    which case every trial resamples ``K * N_d`` calibration and ``n_test``
    test rows without replacement from the file(s).
    """

    method: str = "wfcp"
    alpha: float = 0.1
    M: int = 20
    T: int = 60
    K: int = 20
    N_d: int = 20
    snr_db: float = 0.0
    h_min_sq: float = 1.0
    n_test: int = 400
    n_trials: int = 400
    seed: int | None = None
    n_classes: int = 10
    dirichlet_conc: float | list = 0.1
    temperature: float = 1.0
    calib_csv: str | None = None
    test_csv: str | None = None
    power: float = 1.0
    pin_channel: bool = False
    erasure_model: str = "fading"
    server_K: str = "active"
    sigma_sq_override: float | None = None
    allow_nonpositive_alpha_c: bool = False

    def validate(self) -> "ScenarioConfig":
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        for name in ("M", "T", "K", "N_d", "n_test", "n_trials", "n_classes"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.h_min_sq < 0 or self.power <= 0:
            raise ConfigError("need h_min_sq >= 0 and power > 0")
        if self.method in ("wfcp", "wfcp_naive"):
            if self.M > self.T:
                raise ConfigError(f"wfcp needs M <= T (got M={self.M}, T={self.T})")
            if self.h_min_sq <= 0:
                raise ConfigError("wfcp needs h_min_sq > 0")
        if self.method == "dqq" and self.T // self.K < 1:
            raise ConfigError(f"dqq needs floor(T/K) >= 1 (got T={self.T}, K={self.K})")
        if self.test_csv is not None and self.calib_csv is None:
            raise ConfigError("test_csv requires calib_csv")
        return self

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **dataclasses.asdict(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
        return cls(**data).validate()


def load_config(path) -> dict:
    """Read a JSON config; returns the raw mapping (scenario fields plus
    optional ``grid`` and ``methods`` entries for sweeps)."""
    with Path(path).open() as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


@dataclass
class TrialResult:
    coverage: float
    inefficiency: float
    flag: str | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    trials: list[TrialResult]

    def _values(self, attr):
        return np.array([getattr(t, attr) for t in self.trials])

    @staticmethod
    def _mean(values):
        return math.fsum(values) / len(values)

    @staticmethod
    def _se(values):
        if len(values) < 2:
            return math.nan
        return float(np.std(values, ddof=1) / math.sqrt(len(values)))

    @property
    def coverages(self) -> np.ndarray:
        return self._values("coverage")

    @property
    def inefficiencies(self) -> np.ndarray:
        return self._values("inefficiency")

    @property
    def coverage(self) -> float:
        return self._mean(self.coverages)

    @property
    def coverage_se(self) -> float:
        return self._se(self.coverages)

    @property
    def ineff(self) -> float:
        return self._mean(self.inefficiencies)

    @property
    def ineff_se(self) -> float:
        return self._se(self.inefficiencies)

    @property
    def ineff_norm(self) -> float:
        return self.ineff / self.n_classes

    @property
    def n_classes(self) -> int:
        return self.trials[0].diagnostics.get("n_classes", self.config.n_classes)

    @property
    def flags(self) -> Counter:
        return Counter(t.flag for t in self.trials if t.flag)

    def diagnostic(self, key) -> np.ndarray:
        return np.array([t.diagnostics.get(key, math.nan) for t in self.trials], dtype=float)

    def row(self) -> dict:
        c = self.config
        return {
            "method": c.method, "alpha": c.alpha, "M": c.M, "T": c.T, "K": c.K,
            "snr_db": c.snr_db, "h_min_sq": c.h_min_sq,
            "coverage": self.coverage, "coverage_se": self.coverage_se,
            "ineff": self.ineff, "ineff_norm": self.ineff_norm, "ineff_se": self.ineff_se,
            "trials": len(self.trials),
            "flags": ";".join(f"{k}={v}" for k, v in sorted(self.flags.items())),
        }


class _DataSource:
    """Draws a fresh score table for each trial."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.pool = None
        if cfg.calib_csv is not None:
            labels, probs = read_probs_csv(cfg.calib_csv)
            test = read_probs_csv(cfg.test_csv) if cfg.test_csv else None
            n_cal = cfg.K * cfg.N_d
            if test is None and n_cal + cfg.n_test > len(labels):
                raise ConfigError(f"{cfg.calib_csv} has {len(labels)} rows, "
                                  f"need {n_cal + cfg.n_test}")
            if test is not None and (n_cal > len(labels) or cfg.n_test > len(test[0])):
                raise ConfigError("score files are too small for K * N_d calibration "
                                  "and n_test test rows")
            self.pool = (labels, probs, test)
            self.n_classes = probs.shape[1]
        else:
            conc = cfg.dirichlet_conc
            self.conc = np.full(cfg.n_classes, float(conc)) if np.isscalar(conc) else np.asarray(conc, float)
            self.n_classes = cfg.n_classes

    def draw(self, rng) -> ScoreTable:
        cfg = self.cfg
        if self.pool is None:
            return generate_synthetic(cfg.n_classes, cfg.K, cfg.N_d, cfg.n_test,
                                      self.conc, seed=rng, temperature=cfg.temperature)
        labels, probs, test = self.pool
        n_cal = cfg.K * cfg.N_d
        if test is None:
            idx = rng.permutation(len(labels))[: n_cal + cfg.n_test]
            cal, tst = idx[:n_cal], idx[n_cal:]
            return table_from_probs(labels[cal], probs[cal], labels[tst], probs[tst], cfg.K)
        cal = rng.permutation(len(labels))[:n_cal]
        tst = rng.permutation(len(test[0]))[: cfg.n_test]
        return table_from_probs(labels[cal], probs[cal], test[0][tst], test[1][tst], cfg.K)


def _full_set(table: ScoreTable) -> PredictionBatch:
    return PredictionBatch(np.ones((table.n_test, table.n_classes), dtype=bool), 1.0)


def run_trial(cfg: ScenarioConfig, table: ScoreTable, gains, noise_seed) -> TrialResult:
    """Evaluate ``cfg.method`` on one score table and channel draw."""
    q = Quantizer(cfg.M)
    alpha = cfg.alpha
    flag = None
    diag: dict = {"n_classes": table.n_classes}
    method = cfg.method
    if method == "centralized":
        batch = cp_batch(table.test_scores, table.pooled(), alpha)
    elif method == "quantized":
        batch = quantized_cp_batch(table.test_scores, table.pooled(), q, alpha)
    elif method == "fedqq_noiseless":
        try:
            batch = fedqq_batch(table, optimize_levels(cfg.N_d, cfg.K, alpha))
        except InfeasibleLevels:
            batch, flag = _full_set(table), "levels_infeasible"
    else:
        channel = ChannelRealization(gains, cfg.power / snr_from_db(cfg.snr_db),
                                     cfg.power, cfg.h_min_sq)
        if method == "dqq":
            try:
                batch, d = dqq_round(table, q, alpha, channel, cfg.T, noise_seed,
                                     erasure_model=cfg.erasure_model)
                flag = d.flag
                diag.update(received=d.received, erasure_prob=d.erasure_prob,
                            threshold=d.threshold)
            except InfeasibleLevels:
                batch, flag = _full_set(table), "levels_infeasible"
        else:
            try:
                batch, d = wfcp_round(table, q, alpha, channel, cfg.T, noise_seed,
                                      correct=(method == "wfcp"), server_K=cfg.server_K,
                                      sigma_sq=cfg.sigma_sq_override,
                                      allow_nonpositive=cfg.allow_nonpositive_alpha_c)
                flag = d.flag
                diag.update(K_a=d.K_a, sigma_sq=d.sigma_sq, alpha_c=d.alpha_c,
                            index=d.index, threshold=batch.threshold)
            except InfeasibleCorrection:
                batch, flag = _full_set(table), "alpha_c_infeasible"
                diag.update(K_a=int(np.sum(channel.gains**2 >= cfg.h_min_sq)))
    return TrialResult(batch.coverage(table.test_labels), batch.inefficiency(), flag, diag)


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Run ``cfg.n_trials`` independent trials and collect their outcomes.

    Each trial resamples calibration and test data and receiver noise; the
    fading gains are redrawn too unless ``cfg.pin_channel`` is set, in which
    case one realization (drawn from the scenario seed) serves every trial.
    Infeasible corrections and empty active sets fall back to the full label
    set and are counted in ``ScenarioResult.flags``.
    """
    cfg.validate()
    source = _DataSource(cfg)
    root = np.random.SeedSequence(cfg.seed)
    pinned_ss, trials_ss = root.spawn(2)
    pinned = draw_rayleigh_gains(cfg.K, pinned_ss) if cfg.pin_channel else None
    results = []
    for ss in trials_ss.spawn(cfg.n_trials):
        data_ss, chan_ss, noise_ss = ss.spawn(3)
        table = source.draw(np.random.default_rng(data_ss))
        gains = pinned if pinned is not None else draw_rayleigh_gains(cfg.K, chan_ss)
        results.append(run_trial(cfg, table, gains, noise_ss))
    return ScenarioResult(cfg, results)


def cell_seed(base_seed: int, cell_index: int) -> int:
    """Deterministic seed of one sweep cell."""
    return int(np.random.SeedSequence([base_seed, cell_index]).generate_state(1, np.uint64)[0])


def sweep(grid: dict, base: ScenarioConfig, methods=None, common_seed: bool = False,
          progress=None) -> list[ScenarioResult]:
    """Run every cell of the cross product ``grid`` for each method.

    Cells are enumerated in ``itertools.product`` order of the grid values.
    All methods within a cell share that cell's seed; ``common_seed`` gives
    every cell the base seed as well, so neighbouring cells differ only
    through the swept parameter.
    """
    unknown = set(grid) - set(SWEEPABLE)
    if unknown:
        raise ConfigError(f"cannot sweep over {', '.join(sorted(unknown))}")
    if base.seed is None:
        raise ConfigError("sweep needs a base seed")
    methods = list(methods or [base.method])
    names = list(grid)
    results = []
    for idx, values in enumerate(itertools.product(*(grid[n] for n in names))):
        seed = base.seed if common_seed else cell_seed(base.seed, idx)
        for method in methods:
            cfg = base.replace(method=method, seed=seed, **dict(zip(names, values)))
            res = run_scenario(cfg)
            if progress is not None:
                progress(res)
            results.append(res)
    return results


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def results_to_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for res in results:
        row = res.row()
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def results_to_json(results) -> str:
    rows = []
    for res in results:
        row = {k: _json_safe(v) for k, v in res.row().items()}
        row["config"] = res.config.to_dict()
        rows.append(row)
    return json.dumps({"schema_version": SCHEMA_VERSION, "columns": list(CSV_COLUMNS),
                       "rows": rows}, indent=2, sort_keys=True) + "\n"


def export(results, path, format: str | None = None) -> Path:
    """Write results as long-format CSV or schema-versioned JSON.

    The format defaults to the file suffix.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".") or "csv").lower()
    if isinstance(results, ScenarioResult):
        results = [results]
    if fmt == "csv":
        text = results_to_csv(results)
    elif fmt == "json":
        text = results_to_json(results)
    else:
        raise ValueError(f"unsupported export format {fmt!r}")
    path.write_text(text)
    return path
