"""Monte-Carlo harness: configuration, trials, sweeps and CSV output."""

import csv
import dataclasses
import io
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .fusion import ADVANCED, BASELINE, FusionContext, ReceiverPayload, estimate_location, make_payload
from .geometry import TopologySpec, build_scene, sample_target, search_region
from .local_estimation import LocalEstimate, crb_tau, estimate_delay_coeff
from .quantization import KLT, UNIFORM
from .signalgen import coarse_window, energy_for_rsnr, make_channel, receiver_snr_db, synthesize_received
from .waveform import PulseSpec

log = logging.getLogger(__name__)

BOTH = "both"
NOISE_VAR = 1.0
CSV_HEADER = ["topology", "rsnr_db", "capacity_bits", "quantizer", "design", "mmse_m2",
              "stderr_m2", "pg", "overhead_bps", "trials", "excluded"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    topology: str = "circular"
    n_receivers: int = 6
    radius: float = 500.0
    spacing: float = 100.0
    standoff: float = 500.0
    target_offset: float = 300.0
    rsnr: Tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0)
    capacity: Tuple[float, ...] = (10.0,)
    quantizer: Tuple[str, ...] = (KLT,)
    design: str = BOTH
    trials: int = 1000
    master_seed: int = 0
    T: float = 2e-8
    Ts: float = 1e-8
    Tc: float = 6e-8
    Td: float = 8e-8
    fc: float = 3.55
    B: float = 50e6
    T_p: float = 1e-5
    workers: int = 1

    def __post_init__(self):
        try:
            self.topology_spec
            self.pulse
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if any(not (c >= 0) for c in self.capacity):
            raise ConfigError("capacities must be >= 0")
        if any(math.isfinite(c) and c != int(c) for c in self.capacity):
            raise ConfigError("finite capacities must be whole bits")
        if any(q not in (KLT, UNIFORM) for q in self.quantizer):
            raise ConfigError(f"quantizer must be {KLT} or {UNIFORM}")
        if self.design not in (ADVANCED, BASELINE, BOTH):
            raise ConfigError("design must be advanced, baseline or both")
        if not math.isclose(self.Ts, 1.0 / (2.0 * self.B), rel_tol=1e-9):
            raise ConfigError("Ts must equal 1/(2B)")
        if self.T_p <= 0 or self.workers < 1:
            raise ConfigError("T_p and workers must be positive")

    @property
    def topology_spec(self) -> TopologySpec:
        return TopologySpec(kind=self.topology, n_receivers=self.n_receivers, radius=self.radius,
                            spacing=self.spacing, standoff=self.standoff, target_offset=self.target_offset)

    @property
    def pulse(self) -> PulseSpec:
        return PulseSpec(T=self.T, Ts=self.Ts, Tc=self.Tc, Td=self.Td)

    @property
    def designs(self) -> Tuple[str, ...]:
        return (ADVANCED, BASELINE) if self.design == BOTH else (self.design,)

    def conditions(self):
        return [Condition(r, _cap(c), q) for r in self.rsnr for c in self.capacity for q in self.quantizer]


def _cap(c) -> Optional[int]:
    return None if math.isinf(c) else int(c)


@dataclass(frozen=True)
class Condition:
    rsnr_db: float
    capacity: Optional[int]  # None = unlimited
    quantizer: str = KLT


@dataclass
class TrialRecord:
    trial: int
    truth: np.ndarray
    estimates: Dict[str, Optional[np.ndarray]] = field(default_factory=dict)
    sq_error: Dict[str, float] = field(default_factory=dict)
    excluded: Dict[str, bool] = field(default_factory=dict)
    snr_db: Optional[np.ndarray] = None
    failure: Optional[str] = None


@dataclass(frozen=True)
class SummaryRow:
    topology: str
    rsnr_db: float
    capacity_bits: Optional[int]
    quantizer: str
    design: str
    mmse_m2: float
    stderr_m2: float
    pg: Optional[float]
    overhead_bps: float
    trials: int
    excluded: int


# ---------------------------------------------------------------------------
# one trial


@dataclass
class _Setup:
    config: ExperimentConfig
    topology: TopologySpec
    scene: object
    spec: PulseSpec
    k0: list
    tau_support: list
    region: tuple


_SETUP_CACHE: Dict[ExperimentConfig, _Setup] = {}


def _setup(config: ExperimentConfig) -> _Setup:
    cached = _SETUP_CACHE.get(config)
    if cached is not None:
        return cached
    topo = config.topology_spec
    scene = build_scene(topo, fc=config.fc)
    spec = config.pulse
    k0, sup = zip(*(coarse_window(scene, topo, spec, n) for n in range(topo.n_receivers)))
    setup = _Setup(config, topo, scene, spec, list(k0), list(sup), search_region(topo))
    _SETUP_CACHE[config] = setup
    return setup


def trial_rng(config: ExperimentConfig, rsnr_db: float, trial: int) -> np.random.Generator:
    """Independent stream per (seed, scenario, trial).

    Capacity and quantizer are left out of the key so every codec setting
    sees the same targets and noise.
    """
    key = f"{config.topology}|{config.n_receivers}|{float(rsnr_db)!r}".encode()
    return np.random.default_rng(np.random.SeedSequence([config.master_seed, zlib.crc32(key), trial]))


@dataclass
class _Scenario:
    truth: np.ndarray
    spec: PulseSpec
    samples: list
    local: List[LocalEstimate]
    snr_db: np.ndarray


def simulate_receivers(config: ExperimentConfig, rsnr_db: float, trial: int) -> _Scenario:
    """Target, channel, received samples and local estimates for one trial."""
    st = _setup(config)
    rng = trial_rng(config, rsnr_db, trial)
    truth = sample_target(st.topology, rng)
    chan = make_channel(st.scene, truth, rng, sigma2=NOISE_VAR)
    spec = st.spec.with_energy(energy_for_rsnr(rsnr_db, st.spec, chan.alpha, chan.sigma2))
    samples, local = [], []
    for n in range(chan.n_receivers):
        r = synthesize_received(spec, chan, n, st.k0[n], rng)
        est = estimate_delay_coeff(r, st.k0[n], spec, chan.sigma2[n], tau_range=st.tau_support[n])
        est = dataclasses.replace(est, crb_tau=crb_tau(chan.alpha[n], chan.sigma2[n], spec, chan.tau[n], st.k0[n]))
        samples.append(r)
        local.append(est)
    return _Scenario(truth, spec, samples, local, receiver_snr_db(spec, chan.alpha, chan.sigma2))


def _localize(st: _Setup, sc: _Scenario, design, capacity, quantizer):
    sigma2 = np.full(len(sc.local), NOISE_VAR)
    ctx = FusionContext(st.scene, sc.spec, sigma2, st.k0, quantizer)
    if design == BASELINE:
        payloads = [ReceiverPayload(e.tau_hat, e.alpha_hat, np.zeros(0, np.uint8), 0) for e in sc.local]
    else:
        payloads = [
            make_payload(sc.samples[n], st.k0[n], e.tau_hat, e.alpha_hat, capacity, sc.spec, NOISE_VAR,
                         quantizer, crb=e.crb_tau_hat)
            for n, e in enumerate(sc.local)
        ]
    return estimate_location(design, payloads, ctx, st.region)


def _evaluate(config: ExperimentConfig, rsnr_db: float, trial: int, conditions) -> Dict[Condition, TrialRecord]:
    st = _setup(config)
    out = {}
    try:
        sc = simulate_receivers(config, rsnr_db, trial)
    except Exception as exc:  # recorded, not raised
        log.warning("trial %d at %.2f dB failed: %s", trial, rsnr_db, exc)
        for cond in conditions:
            out[cond] = TrialRecord(trial=trial, truth=np.full(2, np.nan), failure=repr(exc),
                                    excluded={d: True for d in config.designs},
                                    sq_error={d: math.nan for d in config.designs})
        return out
    baseline = None
    for cond in conditions:
        rec = TrialRecord(trial=trial, truth=sc.truth, snr_db=sc.snr_db)
        for design in config.designs:
            try:
                if design == BASELINE:
                    if baseline is None:
                        baseline = _localize(st, sc, BASELINE, 0, cond.quantizer)
                    res = baseline
                else:
                    res = _localize(st, sc, ADVANCED, cond.capacity, cond.quantizer)
            except Exception as exc:
                log.warning("trial %d %s failed: %s", trial, design, exc)
                rec.failure = repr(exc)
                rec.estimates[design] = None
                rec.sq_error[design] = math.nan
                rec.excluded[design] = True
                continue
            rec.estimates[design] = res.theta
            rec.sq_error[design] = float(np.sum((res.theta - sc.truth) ** 2))
            rec.excluded[design] = res.on_boundary
        out[cond] = rec
    return out


def run_trial(config: ExperimentConfig, condition: Condition, trial: int) -> TrialRecord:
    """Full pipeline for one trial; deterministic in (master_seed, condition, trial)."""
    return _evaluate(config, condition.rsnr_db, trial, [condition])[condition]


# ---------------------------------------------------------------------------
# sweeps


def _evaluate_job(args):
    return _evaluate(*args)


def collect_records(config: ExperimentConfig) -> Dict[Condition, List[TrialRecord]]:
    """All trial records of a sweep, grouped by condition, in trial order."""
    conds = config.conditions()
    records: Dict[Condition, List[TrialRecord]] = {c: [] for c in conds}
    jobs = []
    for rsnr_db in config.rsnr:
        group = [c for c in conds if c.rsnr_db == rsnr_db]
        jobs.extend((config, rsnr_db, t, group) for t in range(config.trials))
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_evaluate_job, jobs, chunksize=8))
    else:
        results = [_evaluate_job(j) for j in jobs]
    for res in results:
        for cond, rec in res.items():
            records[cond].append(rec)
    return records


def squared_errors(records: List[TrialRecord], design: str) -> np.ndarray:
    """Squared errors in trial order with excluded trials as NaN."""
    return np.array([
        math.nan if r.excluded.get(design, True) else r.sq_error[design] for r in records
    ])


def mmse_stats(errors: np.ndarray):
    ok = errors[np.isfinite(errors)]
    if ok.size == 0:
        return math.nan, math.nan, int(errors.size)
    se = float(np.std(ok, ddof=1) / np.sqrt(ok.size)) if ok.size > 1 else math.nan
    return float(np.mean(ok)), se, int(errors.size - ok.size)


def summarize(config: ExperimentConfig, records: Dict[Condition, List[TrialRecord]]) -> List[SummaryRow]:
    rows = []
    for cond in config.conditions():
        stats = {d: mmse_stats(squared_errors(records[cond], d)) for d in config.designs}
        pg = None
        if len(stats) == 2 and stats[ADVANCED][0] > 0:
            pg = stats[BASELINE][0] / stats[ADVANCED][0]
        overhead = math.inf if cond.capacity is None else cond.capacity / config.T_p
        for d in config.designs:
            mmse, se, excl = stats[d]
            rows.append(SummaryRow(config.topology, cond.rsnr_db, cond.capacity, cond.quantizer, d,
                                   mmse, se, pg, overhead, len(records[cond]), excl))
    return rows


def run_sweep(config: ExperimentConfig) -> List[SummaryRow]:
    """Cartesian sweep over RSNR, capacity, quantizer and design."""
    return summarize(config, collect_records(config))


def performance_gain(mmse_baseline: float, mmse_advanced: float) -> float:
    return mmse_baseline / mmse_advanced


# ---------------------------------------------------------------------------
# I/O


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def rows_to_csv(rows: List[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        cap = "inf" if r.capacity_bits is None else str(r.capacity_bits)
        w.writerow([r.topology, _fmt(float(r.rsnr_db)), cap, r.quantizer, r.design, _fmt(r.mmse_m2),
                    _fmt(r.stderr_m2), _fmt(r.pg), _fmt(r.overhead_bps), str(r.trials), str(r.excluded)])
    return buf.getvalue()


def write_csv(rows: List[SummaryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows))


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(name: str, text: str):
    text = text.strip()
    default = _FIELDS[name].default
    try:
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if not items:
                raise ValueError("empty list")
            if isinstance(default[0], str):
                return tuple(items)
            return tuple(float(t) for t in items)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, val)
    return values


def make_config(**overrides) -> ExperimentConfig:
    try:
        return ExperimentConfig(**overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        values = parse_config_text(fh.read())
    values.update(overrides)
    return make_config(**values)
