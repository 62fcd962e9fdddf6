"""Experiment orchestration: config loading, replicate loops, aggregation and output."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .baselines import RegressorSpec
from .cdf import MdnSpec
from .data import RngStream
from .dgp import DgpSpec, SyntheticData
from .errors import ConfigError, DietError, InvalidInputError, TaskError
from .methods import METHODS, MethodSettings, run_method
from .multitest import CvsConfig, bh_select, by_select, cvs_run, fdp, power_metric
from .nn import TrainConfig, count_fits

log = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "alpha", "power", "fdp_mean", "replicates", "wall_time_s")
DEFAULT_ALPHAS = (0.05, 0.1, 0.2, 0.3)


def load_schema() -> dict:
    text = resources.files("dietcrt").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class CvsSettings:
    fdr_alphas: tuple[float, ...] = (0.1, 0.2)
    procedure: str = "bh"
    estimate_samplers: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    dgp: DgpSpec
    methods: tuple[str, ...]
    n: int = 500
    replicates: int = 100
    num_nulls: int = 100
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    seed: int = 0
    output: str | None = None
    format: str | None = None
    record_timing: bool = True
    settings: MethodSettings = field(default_factory=MethodSettings)
    cvs: CvsSettings | None = None

    @property
    def is_cvs(self) -> bool:
        return self.cvs is not None


def _settings_from(raw: dict) -> MethodSettings:
    m = raw.get("model", {})
    base_mdn, base_train = MdnSpec(), TrainConfig()
    mdn = MdnSpec(
        hidden=tuple(m.get("hidden", base_mdn.hidden)),
        n_components=m.get("n_components", base_mdn.n_components),
        normalization=m.get("normalization", base_mdn.normalization),
    )
    tr = TrainConfig(
        epochs=m.get("epochs", base_train.epochs),
        batch_size=m.get("batch_size", base_train.batch_size),
        learning_rate=m.get("learning_rate", base_train.learning_rate),
        early_stop_patience=m.get("patience", base_train.early_stop_patience),
    )
    reg = RegressorSpec(hidden=mdn.hidden, normalization=mdn.normalization, train=tr)
    return MethodSettings(mdn, tr, reg, raw.get("statistic", "ami"), raw.get("bins", 10))


def parse_config(raw) -> ExperimentConfig:
    """Validate a decoded JSON object against the schema, then build the config.

    Raises ConfigError whose ``path`` is the JSON path of the offending value.
    """
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, err.json_path)
    dgp_raw = raw["dgp"]
    params = dict(dgp_raw.get("params", {}))
    cvs = None
    if "cvs" in raw:
        c = raw["cvs"]
        for key in ("d", "non_null_count"):
            if key in c:
                params[key] = c[key]
        cvs = CvsSettings(tuple(c.get("fdr_alphas", (0.1, 0.2))), c.get("procedure", "bh"),
                          c.get("estimate_samplers", False))
    try:
        dgp = DgpSpec(dgp_raw["variant"], params, dgp_raw.get("coefficient_seed", 0))
    except InvalidInputError as exc:
        raise ConfigError(str(exc), "$.dgp") from None
    if dgp.is_selection and cvs is None:
        cvs = CvsSettings()
    if cvs is not None and not dgp.is_selection:
        raise ConfigError(f"variant {dgp.variant!r} has no covariate matrix for selection", "$.cvs")
    methods = tuple(raw["methods"])
    if cvs is not None and ("diet_oracle" in methods or "naive" in methods):
        raise ConfigError("diet_oracle and naive are single-test methods", "$.methods")
    try:
        settings = _settings_from(raw)
    except InvalidInputError as exc:
        raise ConfigError(str(exc), "$.model") from None
    return ExperimentConfig(
        dgp=dgp, methods=methods, n=raw.get("n", 500), replicates=raw.get("replicates", 100),
        num_nulls=raw.get("num_nulls", 100), alphas=tuple(raw.get("alphas", DEFAULT_ALPHAS)),
        seed=raw.get("seed", 0), output=raw.get("output"), format=raw.get("format"),
        record_timing=raw.get("record_timing", True), settings=settings, cvs=cvs,
    )


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(raw)


@dataclass
class ResultRow:
    method: str
    alpha: float
    power: float
    fdp_mean: float | None
    replicates: int
    wall_time_s: float | None


# ---------------------------------------------------------------- replicate execution


def replicate_stream(seed: int, r: int) -> RngStream:
    return RngStream(seed).child(r)


def method_stream(rep: RngStream, method: str) -> RngStream:
    # keyed by the method's fixed registry index so subsets of methods reproduce
    return rep.child(1, METHODS.index(method))


def _run_single(cfg: ExperimentConfig, r: int) -> dict:
    rep = replicate_stream(cfg.seed, r)
    data: SyntheticData = cfg.dgp.sample(cfg.n, rep.child(0))
    out = {}
    for m in cfg.methods:
        t0 = time.perf_counter()
        p = run_method(m, data.dataset, data.x_sampler, method_stream(rep, m), cfg.num_nulls,
                       cfg.settings, (data.x_cdf, data.y_cdf))
        out[m] = (p, time.perf_counter() - t0)
    return out


def _run_cvs(cfg: ExperimentConfig, r: int) -> dict:
    rep = replicate_stream(cfg.seed, r)
    data: SyntheticData = cfg.dgp.sample(cfg.n, rep.child(0))
    samplers = None if cfg.cvs.estimate_samplers else data.truth.samplers
    select = bh_select if cfg.cvs.procedure == "bh" else by_select
    out = {}
    for m in cfg.methods:
        t0 = time.perf_counter()
        pv = cvs_run(data.covariates, data.response, samplers, m,
                     CvsConfig(cfg.num_nulls, method_stream(rep, m), cfg.settings))
        stats = []
        for a in cfg.cvs.fdr_alphas:
            sel = select(pv, a)
            stats.append((fdp(sel, data.truth.non_null), power_metric(sel, data.truth.non_null)))
        out[m] = (stats, time.perf_counter() - t0)
    return out


def _guarded(fn, cfg, r):
    log.info("replicate %d/%d", r + 1, cfg.replicates)
    try:
        return fn(cfg, r)
    except DietError as exc:
        raise TaskError(str(exc), "replicate", r) from exc


def run_replicates(cfg: ExperimentConfig, threads: int = 1) -> list[dict]:
    fn = _run_cvs if cfg.is_cvs else _run_single
    if threads <= 1:
        return [_guarded(fn, cfg, r) for r in range(cfg.replicates)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda r: _guarded(fn, cfg, r), range(cfg.replicates)))


def aggregate(cfg: ExperimentConfig, per_rep: list[dict]) -> list[ResultRow]:
    """Order-insensitive reduction of per-replicate results to rows."""
    R = len(per_rep)
    rows = []
    for m in cfg.methods:
        wall = float(sum(rep[m][1] for rep in per_rep)) if cfg.record_timing else None
        if cfg.is_cvs:
            for i, a in enumerate(cfg.cvs.fdr_alphas):
                f = [rep[m][0][i][0] for rep in per_rep]
                pw = [rep[m][0][i][1] for rep in per_rep]
                rows.append(ResultRow(m, a, math.fsum(pw) / R, math.fsum(f) / R, R, wall))
        else:
            ps = np.array([rep[m][0] for rep in per_rep])
            for a in cfg.alphas:
                rows.append(ResultRow(m, a, int(np.count_nonzero(ps <= a)) / R, None, R, wall))
    return rows


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    return aggregate(cfg, run_replicates(cfg, threads))


# ---------------------------------------------------------------- output


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        d = asdict(row)
        w.writerow([_cell(d[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def rows_to_json(rows) -> str:
    return json.dumps([asdict(r) for r in rows], indent=2) + "\n"


def rows_from_json(text: str) -> list[ResultRow]:
    return [ResultRow(**obj) for obj in json.loads(text)]


def emit_results(rows, fmt: str, path=None) -> str:
    """Write rows as CSV or JSON to ``path`` (or just return the text if None)."""
    if fmt == "csv":
        text = rows_to_csv(rows)
    elif fmt == "json":
        text = rows_to_json(rows)
    else:
        raise InvalidInputError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------- tractability


TRACTABILITY_COLUMNS = ("method", "num_nulls", "model_fits", "wall_time_s", "wall_time_ratio")


def tractability_rows(num_nulls_list, n: int = 200, seed: int = 0,
                      settings: MethodSettings | None = None) -> list[dict]:
    """Count model fits and wall time of DIET versus the refit-per-dataset CRT.

    ``wall_time_ratio`` is naive time over DIET time for the same M.
    """
    settings = settings or MethodSettings(
        mdn=MdnSpec(hidden=(32, 32)), train=TrainConfig(epochs=20, early_stop_patience=0),
    )
    settings = MethodSettings(settings.mdn, settings.train,
                              RegressorSpec(settings.mdn.hidden, settings.mdn.normalization, settings.train),
                              settings.statistic, settings.bins)
    data = DgpSpec("univariate_gaussian").sample(n, RngStream(seed))
    out = []
    for M in num_nulls_list:
        timings = {}
        for m in ("diet", "naive"):
            with count_fits() as counter:
                t0 = time.perf_counter()
                run_method(m, data.dataset, data.x_sampler, RngStream(seed).child(M), M, settings)
                timings[m] = (counter.fits, time.perf_counter() - t0)
        for m in ("diet", "naive"):
            fits, wall = timings[m]
            out.append({"method": m, "num_nulls": M, "model_fits": fits, "wall_time_s": wall,
                        "wall_time_ratio": wall / timings["diet"][1]})
    return out


def tractability_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, TRACTABILITY_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(v) for k, v in r.items()})
    return buf.getvalue()
