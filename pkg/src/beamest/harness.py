"""Monte-Carlo NMSE sweeps, leakage tables and their file formats.

Every trial draws its channel and measurement matrix from a stream keyed by
``(seed, trial)`` and its noise from ``(seed, snr index, trial)``.  Results
therefore do not depend on execution order or on the number of workers, and
all SNR points see the same channels.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from .channel import ArrayGeometry, ChannelGenParams, beam_grid, leakage_envelope, realize, sample_clusters
from .errors import BeamEstError, ConfigError
from .measurement import bernoulli_matrix, observe

log = logging.getLogger(__name__)

ESTIMATORS = ("oracle-ls", "bds-samp", "samp", "omp", "bomp", "asd")
CSV_HEADER = (
    "snr_db",
    "estimator",
    "nmse_mean",
    "nmse_std",
    "nmse_stderr",
    "trials",
    "mean_support_size",
    "mean_iterations",
    "wall_time_s",
)
_PHI_KEY = 0xF1


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment description; defaults reproduce the 32x32, K = 256, rho = 0.45 setup."""

    P_v: int = 32
    P_h: int = 32
    K: int = 256
    rho: float = 0.45
    mu: float = 0.9
    snr_grid_db: tuple = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    trials: int = 500
    estimators: tuple = ("oracle-ls", "bds-samp", "samp", "bomp", "asd")
    seed: int = 20240611
    workers: int = 1
    freeze_phi: bool = False
    # channel generator
    n_clusters: int = 20
    rays_per_cluster: int = 20
    ray_spread: float = 0.01
    delay_spread_s: float = 100e-9
    power_decay_s: float = ChannelGenParams.power_decay_s
    cluster_shadowing_db: float = 3.0
    vr_min_frac: float = 0.125
    vr_max_frac: float = 0.5
    carrier_freq: float = 11e9
    # estimators
    neighbor_rule: str = "as-paper"
    neighbor_scope: str = "all"
    initial_step: int = 1
    max_support: int = 0
    oracle_energy_fraction: object = "auto"
    sparsity: object = "genie"
    bomp_block_v: int = 4
    bomp_block_h: int = 4
    asd_energy_fraction: float = 0.8
    asd_window: int = 2

    @property
    def geometry(self):
        return ArrayGeometry(self.P_v, self.P_h)

    @property
    def channel_params(self):
        return ChannelGenParams(
            n_clusters=self.n_clusters,
            rays_per_cluster=self.rays_per_cluster,
            rho=self.rho,
            ray_spread=self.ray_spread,
            delay_spread_s=self.delay_spread_s,
            power_decay_s=self.power_decay_s,
            cluster_shadowing_db=self.cluster_shadowing_db,
            vr_min_frac=self.vr_min_frac,
            vr_max_frac=self.vr_max_frac,
            carrier_freq=self.carrier_freq,
        )

    def bds_config(self, snr_db):
        return est.BdsSampConfig(
            snr_db=snr_db,
            mu=self.mu,
            initial_step=self.initial_step,
            max_support=self.max_support or None,
            neighbor_rule=self.neighbor_rule,
            neighbor_scope=self.neighbor_scope,
        )

    def replace(self, **changes):
        cfg = dataclasses.replace(self, **changes)
        validate_config(cfg)
        return cfg


# ---------------------------------------------------------------- config file


def _parse_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float(text):
    return float(text)


def _parse_int(text):
    return int(text, 0)


def _parse_floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _parse_names(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _parse_fraction(text):
    return "auto" if text.strip().lower() == "auto" else float(text)


def _parse_sparsity(text):
    return "genie" if text.strip().lower() == "genie" else int(text)


_PARSERS = {}
for _f in dataclasses.fields(ExperimentConfig):
    _PARSERS[_f.name] = {int: _parse_int, float: _parse_float, bool: _parse_bool, str: str}.get(
        type(_f.default)
    )
_PARSERS.update(
    snr_grid_db=_parse_floats,
    estimators=_parse_names,
    oracle_energy_fraction=_parse_fraction,
    sparsity=_parse_sparsity,
)


def validate_config(cfg, lines=None):
    """Raise :class:`ConfigError` naming the first invalid key."""
    lines = lines or {}

    def bad(key, msg):
        raise ConfigError(key, msg, lines.get(key))

    if cfg.P_v < 1 or cfg.P_h < 1:
        bad("P_v" if cfg.P_v < 1 else "P_h", "array dimensions must be >= 1")
    if not 1 <= cfg.K <= cfg.P_v * cfg.P_h:
        bad("K", f"must lie in [1, {cfg.P_v * cfg.P_h}]")
    if not 0.0 <= cfg.rho <= 1.0:
        bad("rho", "must lie in [0, 1]")
    if not 0.0 < cfg.mu <= 1.0:
        bad("mu", "must lie in (0, 1]")
    if not cfg.snr_grid_db:
        bad("snr_grid_db", "must not be empty")
    if cfg.trials < 1:
        bad("trials", "must be >= 1")
    if cfg.workers < 1:
        bad("workers", "must be >= 1")
    if not cfg.estimators:
        bad("estimators", "must not be empty")
    for name in cfg.estimators:
        if name not in ESTIMATORS:
            bad("estimators", f"unknown estimator {name!r}; known: {', '.join(ESTIMATORS)}")
    if len(set(cfg.estimators)) != len(cfg.estimators):
        bad("estimators", "duplicate estimator")
    if cfg.seed < 0 or cfg.seed >= 2**64:
        bad("seed", "must be a 64-bit unsigned integer")
    if cfg.neighbor_rule not in est.NEIGHBOR_RULES:
        bad("neighbor_rule", f"must be one of {est.NEIGHBOR_RULES}")
    if cfg.neighbor_scope not in est.NEIGHBOR_SCOPES:
        bad("neighbor_scope", f"must be one of {est.NEIGHBOR_SCOPES}")
    if cfg.initial_step < 1:
        bad("initial_step", "must be >= 1")
    if not 0 <= cfg.max_support <= cfg.K:
        bad("max_support", f"must lie in [0, {cfg.K}] (0 means K)")
    frac = cfg.oracle_energy_fraction
    if frac != "auto" and not (isinstance(frac, float) and 0.0 < frac <= 1.0):
        bad("oracle_energy_fraction", "must be 'auto' or a number in (0, 1]")
    if cfg.sparsity != "genie" and not (isinstance(cfg.sparsity, int) and 1 <= cfg.sparsity <= cfg.K):
        bad("sparsity", f"must be 'genie' or an integer in [1, {cfg.K}]")
    if cfg.P_v % cfg.bomp_block_v or cfg.P_h % cfg.bomp_block_h or min(cfg.bomp_block_v, cfg.bomp_block_h) < 1:
        bad("bomp_block_v", "BOMP tiles must partition the beam grid")
    if not 0.0 < cfg.asd_energy_fraction <= 1.0:
        bad("asd_energy_fraction", "must lie in (0, 1]")
    if cfg.asd_window < 0:
        bad("asd_window", "must be >= 0")
    try:
        cfg.channel_params.validate()
    except BeamEstError as exc:
        msg = str(exc)
        key = "rho" if "rho" in msg else "vr_max_frac" if "VR" in msg else "channel"
        bad(key, msg)
    return cfg


def parse_config_text(text):
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, "expected 'key = value'", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(key, "unknown key", lineno)
        if key in values:
            raise ConfigError(key, "duplicate key", lineno)
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(key, f"cannot parse {value!r}: {exc}", lineno) from None
        lines[key] = lineno
    return validate_config(ExperimentConfig(**values), lines)


def parse_config(path):
    """Read a flat ``key = value`` config file; missing keys keep their defaults."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text)


def format_config(cfg):
    """Inverse of :func:`parse_config_text`: every key, one per line."""
    out = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            text = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        out.append(f"{f.name} = {text}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- sweep


@dataclass(frozen=True)
class SweepRow:
    snr_db: float
    estimator: str
    nmse_mean: float
    nmse_std: float
    nmse_stderr: float
    trials: int
    mean_support_size: float
    mean_iterations: float
    wall_time_s: float


@dataclass
class SweepResult:
    rows: list
    failures: dict = field(default_factory=dict)

    def row(self, snr_db, estimator):
        for r in self.rows:
            if r.snr_db == snr_db and r.estimator == estimator:
                return r
        raise KeyError((snr_db, estimator))


def trial_streams(seed, trial, n_snr):
    """Independent generators for one trial: (channel, phi, [noise per SNR])."""
    channel = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, trial)))
    phi = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, trial)))
    noise = [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2 + k, trial))) for k in range(n_snr)]
    return channel, phi, noise


def draw_phi(cfg, trial):
    if cfg.freeze_phi:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(_PHI_KEY,)))
    else:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, trial)))
    return bernoulli_matrix(cfg.K, cfg.P_v * cfg.P_h, rng)


def _oracle(cfg, y, Phi, h_B):
    if cfg.oracle_energy_fraction == "auto":
        return est.oracle_ls_best(y, Phi, h_B)
    return est.oracle_ls(y, Phi, h_B, cfg.oracle_energy_fraction)


def run_estimator(name, cfg, y, Phi, snr_db, sparsity, gram=None):
    """Run one registered estimator on ``(y, Phi)``; ``gram`` is an optional cached ``Phi^T Phi``."""
    g = cfg.geometry
    if name == "bds-samp":
        return est.bds_samp(y, Phi, g, cfg.bds_config(snr_db), gram=gram)
    if name == "samp":
        return est.samp(y, Phi, cfg.bds_config(snr_db), geometry=g, gram=gram)
    if name == "omp":
        return est.omp(y, Phi, sparsity)
    if name == "asd":
        return est.asd(y, Phi, g, sparsity, cfg.asd_energy_fraction, cfg.asd_window)
    if name == "bomp":
        tile = cfg.bomp_block_v * cfg.bomp_block_h
        blocks = max(1, min(-(-sparsity // tile), cfg.K // tile, g.P // tile))
        return est.bomp(y, Phi, g, (cfg.bomp_block_v, cfg.bomp_block_h), blocks)
    raise ValueError(f"unknown estimator {name!r}")


def run_trial(cfg, trial):
    """All SNR points of one trial.

    Returns ``{(snr_index, estimator): (nmse, support, iterations, seconds)}``
    with ``None`` in place of the tuple when the estimator raised.
    """
    g = cfg.geometry
    ch_rng, _, noise_rngs = trial_streams(cfg.seed, trial, len(cfg.snr_grid_db))
    channel = realize(sample_clusters(g, cfg.channel_params, ch_rng), g)
    Phi = draw_phi(cfg, trial)
    gram = Phi.T @ Phi
    needs_genie = cfg.sparsity == "genie" and any(e in cfg.estimators for e in ("omp", "asd", "bomp"))
    out = {}
    for k, snr in enumerate(cfg.snr_grid_db):
        obs = observe(Phi, channel.h_B, snr, noise_rngs[k])
        oracle = None
        if "oracle-ls" in cfg.estimators or needs_genie:
            t0 = time.perf_counter()
            try:
                oracle = _oracle(cfg, obs.y, Phi, channel.h_B)
                oracle_res = (est.nmse(channel.h_B, oracle.h_hat), len(oracle.support), oracle.iterations)
            except BeamEstError as exc:
                log.warning("trial %d snr %s: oracle-ls failed: %s", trial, snr, exc)
                oracle_res = None
            dt = time.perf_counter() - t0
            if "oracle-ls" in cfg.estimators:
                out[(k, "oracle-ls")] = None if oracle_res is None else (*oracle_res, dt)
        if cfg.sparsity == "genie":
            sparsity = len(oracle.support) if oracle is not None else None
        else:
            sparsity = cfg.sparsity
        for name in cfg.estimators:
            if name == "oracle-ls":
                continue
            if name in ("omp", "asd", "bomp") and sparsity is None:
                out[(k, name)] = None
                continue
            t0 = time.perf_counter()
            try:
                rep = run_estimator(name, cfg, obs.y, Phi, snr, sparsity, gram)
                out[(k, name)] = (
                    est.nmse(channel.h_B, rep.h_hat),
                    len(rep.support),
                    rep.iterations,
                    time.perf_counter() - t0,
                )
            except (BeamEstError, np.linalg.LinAlgError) as exc:
                log.warning("trial %d snr %s: %s failed: %s", trial, snr, name, exc)
                out[(k, name)] = None
    return out


def _run_trial_star(args):
    return run_trial(*args)


def aggregate(cfg, per_trial):
    """Combine per-trial outputs (in trial order) into a :class:`SweepResult`."""
    rows, failures = [], {}
    for k, snr in enumerate(cfg.snr_grid_db):
        for name in cfg.estimators:
            vals = [res[(k, name)] for res in per_trial]
            ok = np.array([v for v in vals if v is not None], dtype=np.float64).reshape(-1, 4)
            n_fail = len(vals) - ok.shape[0]
            if n_fail:
                failures[(snr, name)] = n_fail
            n = ok.shape[0]
            if n == 0:
                log.error("snr %s: every %s trial failed", snr, name)
                continue
            std = float(np.std(ok[:, 0], ddof=1)) if n > 1 else 0.0
            rows.append(
                SweepRow(
                    snr_db=float(snr),
                    estimator=name,
                    nmse_mean=float(np.mean(ok[:, 0])),
                    nmse_std=std,
                    nmse_stderr=std / math.sqrt(n),
                    trials=n,
                    mean_support_size=float(np.mean(ok[:, 1])),
                    mean_iterations=float(np.mean(ok[:, 2])),
                    wall_time_s=float(np.sum(ok[:, 3])),
                )
            )
    rows.sort(key=lambda r: (r.snr_db, r.estimator))
    return SweepResult(rows=rows, failures=failures)


def run_sweep(cfg, progress=None):
    """Monte-Carlo NMSE of every configured estimator at every SNR point."""
    validate_config(cfg)
    jobs = [(cfg, t) for t in range(cfg.trials)]
    per_trial = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for i, res in enumerate(pool.map(_run_trial_star, jobs, chunksize=max(1, cfg.trials // (8 * cfg.workers)))):
                per_trial.append(res)
                if progress:
                    progress(i + 1, cfg.trials)
    else:
        for i, job in enumerate(jobs):
            per_trial.append(_run_trial_star(job))
            if progress:
                progress(i + 1, cfg.trials)
    result = aggregate(cfg, per_trial)
    for (snr, name), n in sorted(result.failures.items()):
        log.warning("snr %s: %s failed in %d of %d trials", snr, name, n, cfg.trials)
    return result


# ---------------------------------------------------------------- files


def _fmt(x):
    return f"{x:.16e}"


def emit_csv(result, path):
    """Write the sweep table; floats carry 17 significant digits."""
    rows = sorted(result.rows, key=lambda r: (r.snr_db, r.estimator))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(
                [
                    _fmt(r.snr_db),
                    r.estimator,
                    _fmt(r.nmse_mean),
                    _fmt(r.nmse_std),
                    _fmt(r.nmse_stderr),
                    r.trials,
                    _fmt(r.mean_support_size),
                    _fmt(r.mean_iterations),
                    _fmt(r.wall_time_s),
                ]
            )


def read_csv(path):
    """Parse a table written by :func:`emit_csv`."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        for rec in reader:
            rows.append(
                SweepRow(
                    snr_db=float(rec[0]),
                    estimator=rec[1],
                    nmse_mean=float(rec[2]),
                    nmse_std=float(rec[3]),
                    nmse_stderr=float(rec[4]),
                    trials=int(rec[5]),
                    mean_support_size=float(rec[6]),
                    mean_iterations=float(rec[7]),
                    wall_time_s=float(rec[8]),
                )
            )
    return SweepResult(rows=rows)


def run_leakage(I_s, I_e, theta0, P_grid):
    """``(grid frequency, normalised |Dirichlet kernel|)`` pairs."""
    env = leakage_envelope(I_s, I_e, theta0, P_grid)
    return list(zip(beam_grid(P_grid).tolist(), env.tolist()))


def write_leakage_csv(pairs, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("theta", "envelope"))
        for theta, val in pairs:
            w.writerow((_fmt(theta), _fmt(val)))


def _fmt_complex(z):
    return f"{z.real:.16e}{z.imag:+.16e}j"


def write_channel_dump(path, H_B, rho, seed):
    """One beam-domain row per line, entries ``re+imj`` separated by commas."""
    P_v, P_h = H_B.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# P_v={P_v} P_h={P_h} rho={rho!r} seed={seed}\n")
        for row in H_B:
            fh.write(",".join(_fmt_complex(z) for z in row) + "\n")


def read_channel_dump(path):
    """Return ``(H_B, header_dict)`` from a file written by :func:`write_channel_dump`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError("missing header line")
        meta = dict(item.split("=", 1) for item in header[1:].split())
        rows = [[complex(tok) for tok in line.strip().split(",")] for line in fh if line.strip()]
    meta = {"P_v": int(meta["P_v"]), "P_h": int(meta["P_h"]), "rho": float(meta["rho"]), "seed": int(meta["seed"])}
    H_B = np.array(rows, dtype=np.complex128)
    if H_B.shape != (meta["P_v"], meta["P_h"]):
        raise ValueError(f"matrix shape {H_B.shape} disagrees with header")
    return H_B, meta


def channel_drop(cfg, seed):
    """One channel realisation for the ``channel`` CLI command."""
    g = cfg.geometry
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return realize(sample_clusters(g, cfg.channel_params, rng), g)
