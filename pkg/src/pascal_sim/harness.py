"""Seeded Monte-Carlo experiments, parameter sweeps and trajectories.

Randomness flows through one ``SeedSequence`` per run: every sweep point
spawns a child and every trial a grandchild, so a trial's draws depend only
on the master seed and its indices.  Trials are processed in fixed-size
chunks whose partial sums are reduced in chunk order, which keeps results
byte-identical for any number of worker threads.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np
import yaml

from .crlb import UnidentifiableError, crlb_for
from .detector import joint_mld_detect, mpsk_detect
from .localizer import SearchSpec, mle_estimate_batch, pack, unpack
from .ser_analytic import ErrorModel, ScenarioSpec, TaylorSpec, average_ser_mpsk
from .signal_model import ArrayGeometry, DroneState, FrameConfig, path_loss, power_for_snr, steering_vector

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "PointResult",
    "load_config",
    "config_from_dict",
    "run_point",
    "run_sweep",
    "run_trajectory",
    "write_csv",
    "trajectory_truth",
]

SWEEP_AXES = ("snr_db", "pilots", "antennas", "taylor_order")
DETECTORS = ("mrc", "mmse", "mld")
CHUNK = 64


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment description.

    ``drone_snr_db`` holds a per-drone SNR when powers were given that way;
    an ``snr_db`` sweep overrides every drone's power so that each sees the
    swept per-antenna SNR at its own range.
    """

    geometry: ArrayGeometry
    drones: tuple[DroneState, ...]
    frame: FrameConfig
    search: SearchSpec = field(default_factory=SearchSpec)
    taylor: TaylorSpec = field(default_factory=TaylorSpec)
    sweep_axis: str | None = None
    sweep_values: tuple = ()
    trials: int = 1000
    seed: int = 0
    out: str | None = None
    detectors: tuple[str, ...] = ("mrc",)
    error_model: str = "crlb"
    analytic: bool = True
    source: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
        vals = list(self.sweep_values)
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("sweep values must be strictly increasing")
        bad = set(self.detectors) - set(DETECTORS)
        if bad:
            raise ValueError(f"unknown detectors {sorted(bad)}")
        if "mld" in self.detectors and len(self.drones) != 1:
            raise ValueError("the joint ML detector supports a single drone only")
        if self.error_model not in ("crlb", "empirical"):
            raise ValueError("error_model must be 'crlb' or 'empirical'")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def powers(self) -> np.ndarray:
        return np.array([d.tx_power for d in self.drones])

    @property
    def truth(self) -> np.ndarray:
        return pack([d.doa for d in self.drones], [d.range for d in self.drones],
                    [d.doppler for d in self.drones])

    def config_hash(self) -> str:
        """Digest of the parsed config; the output path does not take part."""
        src = {k: v for k, v in self.source.items() if k != "out"}
        blob = json.dumps(src, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def at(self, axis: str | None, value) -> "ExperimentConfig":
        """Copy with one sweep axis set to ``value``."""
        if axis is None:
            return self
        if axis == "snr_db":
            drones = tuple(replace(d, tx_power=power_for_snr(value, self.geometry.wavelength, d.range,
                                                             self.frame.noise_variance))
                           for d in self.drones)
            return replace(self, drones=drones)
        if axis == "pilots":
            return replace(self, frame=replace(self.frame, subframes_per_frame=int(value)))
        if axis == "antennas":
            return replace(self, geometry=ArrayGeometry(int(value), self.geometry.wavelength))
        if axis == "taylor_order":
            return replace(self, taylor=TaylorSpec(int(value)))
        raise ValueError(f"unknown sweep axis {axis!r}")


def _drone_from_dict(d: dict, wavelength: float, noise_variance: float) -> DroneState:
    rng_m = float(d["range_m"])
    if "power" in d:
        power = float(d["power"])
    elif "snr_db" in d:
        power = power_for_snr(float(d["snr_db"]), wavelength, rng_m, noise_variance)
    else:
        raise ValueError("each drone needs 'power' or 'snr_db'")
    return DroneState(math.radians(float(d["doa_deg"])), rng_m, float(d.get("doppler_hz", 0.0)),
                      power, float(d.get("velocity_mps", 0.0)))


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from the parsed config mapping."""
    raw = dict(raw)
    sc = raw.get("scenario") or {}
    arr = sc.get("array") or {}
    fr = sc.get("frame") or {}
    frame = FrameConfig(
        num_frames=int(fr.get("frames", 1)),
        subframes_per_frame=int(fr.get("subframes", 5)),
        symbols_per_subframe=int(fr.get("symbols", 100)),
        sampling_rate=float(fr.get("sampling_hz", 100e3)),
        modulation_order=int(fr.get("modulation_order", 8)),
        noise_variance=float(fr.get("noise_variance", 1.0)),
    )
    geometry = ArrayGeometry(int(arr.get("antennas", 6)), float(arr.get("wavelength_m", 1.6e-3)))
    drones_raw = sc.get("drones")
    if not drones_raw:
        raise ValueError("scenario.drones must list at least one drone")
    drones = tuple(_drone_from_dict(d, geometry.wavelength, frame.noise_variance) for d in drones_raw)
    frame.check_aliasing(drones)

    se = raw.get("search") or {}
    search_kw = {}
    if "theta_bounds_deg" in se:
        search_kw["theta_bounds"] = tuple(math.radians(v) for v in se["theta_bounds_deg"])
    if "range_bounds_m" in se:
        search_kw["range_bounds"] = tuple(float(v) for v in se["range_bounds_m"])
    if "doppler_bounds_hz" in se:
        search_kw["doppler_bounds"] = tuple(float(v) for v in se["doppler_bounds_hz"])
    if "theta_step_deg" in se:
        search_kw["theta_step"] = math.radians(float(se["theta_step_deg"]))
    if "doppler_step_hz" in se:
        search_kw["doppler_step"] = float(se["doppler_step_hz"])
    for key in ("tolerance", "max_iterations"):
        if key in se:
            search_kw[key] = type(getattr(SearchSpec(), key))(se[key])
    ta = raw.get("taylor") or {}
    taylor = TaylorSpec(int(ta.get("order", 6)) if isinstance(ta, dict) else int(ta))
    sw = raw.get("sweep") or {}
    axis = sw.get("axis")
    values = tuple(sw.get("values") or ())
    if axis is not None and not values:
        raise ValueError("sweep.values must be non-empty")
    return ExperimentConfig(
        geometry=geometry, drones=drones, frame=frame, search=SearchSpec(**search_kw), taylor=taylor,
        sweep_axis=axis, sweep_values=values, trials=int(raw.get("trials", 1000)),
        seed=int(raw.get("seed", 0)), out=raw.get("out"),
        detectors=tuple(raw.get("detectors", ("mrc",))), error_model=raw.get("error_model", "crlb"),
        analytic=bool(raw.get("analytic", True)), source=raw,
    )


def load_config(path) -> ExperimentConfig:
    """Read a YAML experiment file."""
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# Monte-Carlo core
# ---------------------------------------------------------------------------

def _draw_trial(rng: np.random.Generator, l_max, n, t, k, m, noise_variance):
    """Symbols and noise of one trial, always drawn in the same order."""
    idx = rng.integers(0, m, size=(l_max, k, t))
    scale = math.sqrt(noise_variance / 2)
    pn = scale * (rng.standard_normal((l_max, n)) + 1j * rng.standard_normal((l_max, n)))
    dn = scale * (rng.standard_normal((l_max, n, t)) + 1j * rng.standard_normal((l_max, n, t)))
    return idx, pn, dn


def _true_channels(cfg: ExperimentConfig, l_max: int) -> np.ndarray:
    """``(L, N, K)`` true channels ``eta a(theta) exp(j 2 pi fD l / fs)`` (no power)."""
    geo, fr = cfg.geometry, cfg.frame
    theta, rng_m, fd = unpack(cfg.truth)
    steer = steering_vector(geo, theta).T * path_loss(geo.wavelength, rng_m)       # (N, K)
    rot = np.exp(2j * np.pi * np.outer(np.arange(1, l_max + 1), fd) / fr.sampling_rate)
    return steer[None] * rot[:, None, :]


@dataclass
class _ChunkStats:
    """Additive per-chunk accumulators (all arrays indexed ``[l, k]``)."""

    err_sum: np.ndarray
    err_sq: np.ndarray
    ok: np.ndarray
    sym_err: dict
    symbols: np.ndarray
    failures: int
    errors: list

    def __add__(self, o: "_ChunkStats") -> "_ChunkStats":
        return _ChunkStats(self.err_sum + o.err_sum, self.err_sq + o.err_sq, self.ok + o.ok,
                           {d: self.sym_err[d] + o.sym_err[d] for d in self.sym_err},
                           self.symbols + o.symbols, self.failures + o.failures, self.errors + o.errors)


def _run_chunk(cfg: ExperimentConfig, seeds: Sequence[np.random.SeedSequence], keep_errors: bool,
               subframes: Sequence[int]):
    geo, fr = cfg.geometry, cfg.frame
    n, k, t, m, l_max = (geo.num_antennas, len(cfg.drones), fr.symbols_per_subframe,
                         fr.modulation_order, fr.subframes_per_frame)
    b = len(seeds)
    draws = [_draw_trial(np.random.default_rng(s), l_max, n, t, k, m, fr.noise_variance) for s in seeds]
    idx = np.stack([d[0] for d in draws])             # (B, L, K, T)
    pnoise = np.stack([d[1] for d in draws])          # (B, L, N)
    dnoise = np.stack([d[2] for d in draws])          # (B, L, N, T)
    h = _true_channels(cfg, l_max)                    # (L, N, K)
    g = h * np.sqrt(cfg.powers)                       # includes power
    pilots = g.sum(axis=2)[None] + pnoise             # (B, L, N)
    sym = np.exp(2j * np.pi * idx / m)
    data = np.einsum("lnk,blkt->blnt", g, sym) + dnoise

    truth = cfg.truth
    err_sum = np.zeros((l_max, 3 * k))
    err_sq = np.zeros((l_max, 3 * k))
    ok = np.zeros(l_max)
    sym_err = {d: np.zeros((l_max, k)) for d in cfg.detectors}
    symbols = np.zeros(l_max)
    failed = np.zeros(b, dtype=bool)
    psi_prev = None
    kept = []
    for l in subframes:
        psi, _ = mle_estimate_batch(pilots[:, :l], geo, fr, cfg.powers, cfg.search,
                                    reference=truth, warm_start=psi_prev)
        failed |= ~np.all(np.isfinite(psi), axis=1)
        psi_prev = np.where(np.isfinite(psi), psi, truth)
        good = ~failed
        err = psi - truth
        err_sum[l - 1] = err[good].sum(axis=0)
        err_sq[l - 1] = (err[good] ** 2).sum(axis=0)
        ok[l - 1] = good.sum()
        if keep_errors:
            kept.append(np.where(good[:, None], err, np.nan))
        y = data[:, l - 1]                                  # (B, N, T)
        tx = idx[:, l - 1]                                  # (B, K, T)
        symbols[l - 1] = good.sum() * t
        if "mrc" in cfg.detectors:
            theta, rng_m, fd = unpack(psi_prev)
            cols = (path_loss(geo.wavelength, rng_m)[..., None]
                    * np.exp(2j * np.pi * fd * l / fr.sampling_rate)[..., None]
                    * steering_vector(geo, theta))                                  # (B, K, N)
            x = np.einsum("bkn,bnt->bkt", cols.conj(), y)
            dec = mpsk_detect(x, m)
            sym_err["mrc"][l - 1] = np.count_nonzero((dec != tx) & good[:, None, None], axis=(0, 2))
        if "mmse" in cfg.detectors:
            gl = g[l - 1]
            gram = gl.conj().T @ gl + fr.noise_variance * np.eye(k)
            x = np.einsum("kn,bnt->bkt", np.linalg.solve(gram, gl.conj().T), y)
            dec = mpsk_detect(x, m)
            sym_err["mmse"][l - 1] = np.count_nonzero((dec != tx) & good[:, None, None], axis=(0, 2))
        if "mld" in cfg.detectors:
            dec, _ = joint_mld_detect(pilots[:, :l], y, geo, fr, float(cfg.powers[0]), psi_prev, cfg.search)
            sym_err["mld"][l - 1] = np.count_nonzero((dec != tx[:, 0]) & good[:, None], axis=(0, 1))
    errs = [np.stack(kept, axis=1)] if keep_errors else []
    return _ChunkStats(err_sum, err_sq, ok, sym_err, symbols, int(failed.sum()), errs)


@dataclass
class PointResult:
    """Per-subframe Monte-Carlo statistics of one configuration.

    Arrays are indexed ``[l - 1, ...]``; parameter axes follow the packed
    order ``(theta..., d..., fD...)``.
    """

    config: ExperimentConfig
    mean_error: np.ndarray
    rmse: np.ndarray
    trials_ok: np.ndarray
    symbol_errors: dict
    symbols: np.ndarray
    failures: int
    errors: np.ndarray | None = None
    wall_time: float = 0.0

    def ser(self, detector: str = "mrc", subframes=None):
        """Per-drone SER and standard error pooled over the given subframes (default all)."""
        sl = slice(None) if subframes is None else np.asarray(subframes) - 1
        n = float(np.sum(self.symbols[sl]))
        p = np.sum(self.symbol_errors[detector][sl], axis=0) / max(n, 1.0)
        return p, np.sqrt(p * (1 - p) / max(n, 1.0))


def simulate(cfg: ExperimentConfig, seed_seq: np.random.SeedSequence | None = None, threads: int = 1,
             keep_errors: bool = False, chunk: int = CHUNK, subframes: Sequence[int] | None = None) -> PointResult:
    """Run ``cfg.trials`` independent frames and collect per-subframe statistics.

    ``subframes`` restricts estimation and decoding to the listed (1-based)
    subframes; all draws are still made, so a listed subframe sees the same
    noise and symbols whichever others are listed.  Each estimate is
    warm-started from the previous listed subframe, so estimates can differ
    at the refinement tolerance.  With ``keep_errors`` the raw
    per-trial errors are kept as ``(trials, len(subframes), 3K)``.
    """
    start = time.perf_counter()
    l_max = cfg.frame.subframes_per_frame
    subframes = list(range(1, l_max + 1)) if subframes is None else sorted(int(l) for l in subframes)
    if not subframes or subframes[0] < 1 or subframes[-1] > l_max:
        raise ValueError(f"subframes must lie in [1, {l_max}]")
    seed_seq = seed_seq if seed_seq is not None else np.random.SeedSequence(cfg.seed)
    seeds = seed_seq.spawn(cfg.trials)
    chunks = [seeds[i:i + chunk] for i in range(0, len(seeds), chunk)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _run_chunk(cfg, c, keep_errors, subframes), chunks))
    else:
        parts = [_run_chunk(cfg, c, keep_errors, subframes) for c in chunks]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    ok = np.maximum(total.ok, 1)[:, None]
    mean = total.err_sum / ok
    rmse = np.sqrt(total.err_sq / ok)
    errors = np.concatenate(total.errors, axis=0) if keep_errors else None
    return PointResult(cfg, mean, rmse, total.ok, total.sym_err, total.symbols, total.failures, errors,
                       time.perf_counter() - start)


# ---------------------------------------------------------------------------
# analytic companions
# ---------------------------------------------------------------------------

def crlb_std(cfg: ExperimentConfig, num_pilots: int) -> np.ndarray:
    """``(K, 3)`` square-root CRLB at ``num_pilots`` pilots (NaN if unidentifiable)."""
    if cfg.frame.noise_variance == 0:
        return np.zeros((len(cfg.drones), 3))
    try:
        res = crlb_for(cfg.truth, cfg.geometry, cfg.frame, cfg.powers, num_pilots)
    except UnidentifiableError:
        return np.full((len(cfg.drones), 3), np.nan)
    return np.sqrt(res.per_drone())


def analytic_ser(cfg: ExperimentConfig, target: int, subframes: Sequence[int],
                 rmse: np.ndarray | None = None) -> float:
    """Closed-form SER of drone ``target`` (1-based) averaged over ``subframes``."""
    vals = []
    for l in subframes:
        if cfg.error_model == "empirical" and rmse is not None:
            k = len(cfg.drones)
            s_theta, s_fd = rmse[l - 1, target - 1], rmse[l - 1, 2 * k + target - 1]
        else:
            s = crlb_std(cfg, l)[target - 1]
            s_theta, s_fd = s[0], s[2]
        if not (np.isfinite(s_theta) and np.isfinite(s_fd)):
            return float("nan")
        sc = ScenarioSpec(cfg.geometry, cfg.drones, cfg.frame, target, l)
        vals.append(average_ser_mpsk(sc, ErrorModel(s_theta, s_fd), cfg.taylor))
    return float(math.fsum(vals) / len(vals))


# ---------------------------------------------------------------------------
# rows and sweeps
# ---------------------------------------------------------------------------

@dataclass
class ResultRow:
    axis: str
    value: float
    drone: int
    rmse_theta_deg: float
    rmse_range_m: float
    rmse_doppler_hz: float
    bias_theta_deg: float
    bias_range_m: float
    bias_doppler_hz: float
    crlb_theta_deg: float
    crlb_range_m: float
    crlb_doppler_hz: float
    ser_mc: float
    ser_mc_se: float
    ser_analytic: float
    taylor_order: int
    ser_mmse: float
    ser_mmse_se: float
    ser_mld: float
    ser_mld_se: float
    trials: int
    failures: int
    symbols: int
    config_hash: str
    wall_time_s: float = float("nan")


UNITS = {
    "axis": "", "value": "", "drone": "index", "rmse_theta_deg": "deg", "rmse_range_m": "m",
    "rmse_doppler_hz": "Hz", "bias_theta_deg": "deg", "bias_range_m": "m", "bias_doppler_hz": "Hz",
    "crlb_theta_deg": "deg", "crlb_range_m": "m", "crlb_doppler_hz": "Hz", "ser_mc": "prob",
    "ser_mc_se": "prob", "ser_analytic": "prob", "taylor_order": "R", "ser_mmse": "prob",
    "ser_mmse_se": "prob", "ser_mld": "prob", "ser_mld_se": "prob", "trials": "count",
    "failures": "count", "symbols": "count", "config_hash": "sha256/16", "wall_time_s": "s",
}


def _rows_from(res: PointResult, axis: str, value, subframes: Sequence[int], wall: float) -> list[ResultRow]:
    cfg = res.config
    k = len(cfg.drones)
    l_est = max(subframes)
    cr = crlb_std(cfg, l_est)
    rows = []
    nan = float("nan")
    sers = {d: res.ser(d, subframes) for d in cfg.detectors}
    for j in range(k):
        r = res.rmse[l_est - 1]
        mu = res.mean_error[l_est - 1]
        ser_a = analytic_ser(cfg, j + 1, subframes, res.rmse) if cfg.analytic and "mrc" in cfg.detectors else nan
        get = lambda d, i: float(sers[d][i][j]) if d in sers else nan
        rows.append(ResultRow(
            axis=axis, value=float(value), drone=j + 1,
            rmse_theta_deg=math.degrees(r[j]), rmse_range_m=float(r[k + j]), rmse_doppler_hz=float(r[2 * k + j]),
            bias_theta_deg=math.degrees(mu[j]), bias_range_m=float(mu[k + j]),
            bias_doppler_hz=float(mu[2 * k + j]),
            crlb_theta_deg=math.degrees(cr[j, 0]), crlb_range_m=float(cr[j, 1]), crlb_doppler_hz=float(cr[j, 2]),
            ser_mc=get("mrc", 0), ser_mc_se=get("mrc", 1),
            ser_analytic=min(max(ser_a, 0.0), 1.0) if np.isfinite(ser_a) else ser_a,
            taylor_order=cfg.taylor.order,
            ser_mmse=get("mmse", 0), ser_mmse_se=get("mmse", 1), ser_mld=get("mld", 0), ser_mld_se=get("mld", 1),
            trials=cfg.trials, failures=res.failures, symbols=int(np.sum(res.symbols[np.asarray(subframes) - 1])),
            config_hash=cfg.config_hash(), wall_time_s=wall,
        ))
    return rows


def run_point(cfg: ExperimentConfig, sweep_value=None, seed=None, threads: int = 1) -> list[ResultRow]:
    """One configuration: RMSE at ``L`` pilots, frame-average SER over subframes ``1..L``."""
    axis = cfg.sweep_axis if sweep_value is not None else "point"
    point = cfg.at(cfg.sweep_axis, sweep_value) if sweep_value is not None else cfg
    ss = np.random.SeedSequence(cfg.seed if seed is None else seed)
    res = simulate(point, ss, threads)
    subframes = range(1, point.frame.subframes_per_frame + 1)
    return _rows_from(res, axis, sweep_value if sweep_value is not None else 0, subframes, res.wall_time)


def run_sweep(cfg: ExperimentConfig, threads: int = 1, out=None, include_timing: bool = False) -> list[ResultRow]:
    """Map :func:`run_point` over the sweep axis and optionally write CSV.

    A ``pilots`` sweep runs one nested simulation with ``L = max(values)``:
    the row for ``l`` reports the estimate from pilots ``1..l`` and the SER
    of the data in subframe ``l``.  Other axes spawn one seed per point.
    """
    if cfg.sweep_axis is None:
        raise ValueError("config has no sweep axis")
    rows: list[ResultRow] = []
    if cfg.sweep_axis == "pilots":
        point = cfg.at("pilots", max(cfg.sweep_values))
        res = simulate(point, np.random.SeedSequence(cfg.seed), threads,
                       subframes=[int(v) for v in cfg.sweep_values])
        for l in cfg.sweep_values:
            rows += _rows_from(res, "pilots", l, [int(l)], res.wall_time)
    else:
        children = np.random.SeedSequence(cfg.seed).spawn(len(cfg.sweep_values))
        for value, child in zip(cfg.sweep_values, children):
            point = cfg.at(cfg.sweep_axis, value)
            if cfg.sweep_axis == "taylor_order" and rows:
                # the Monte-Carlo part does not depend on R; reuse the first run
                res = replace(res, config=point)
            else:
                res = simulate(point, child, threads)
            rows += _rows_from(res, cfg.sweep_axis, value, range(1, point.frame.subframes_per_frame + 1),
                               res.wall_time)
    target = out if out is not None else cfg.out
    if target:
        write_csv(rows, target, include_timing)
    return rows


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.12e" % float(v)


def write_csv(rows: Sequence, path, include_timing: bool = False) -> None:
    """CSV with a unit-annotated header, ``%.12e`` numbers and ``\\n`` line endings.

    ``path`` may also be an open text stream.
    """
    if not rows:
        raise ValueError("no rows to write")
    names = [f.name for f in fields(rows[0])]
    if not include_timing and "wall_time_s" in names:
        names.remove("wall_time_s")
    units = getattr(type(rows[0]), "UNITS", UNITS)
    if hasattr(path, "write"):
        _write_rows(path, rows, names, units)
        return
    try:
        fh = open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot write output file {path}: {exc}") from exc
    with fh:
        _write_rows(fh, rows, names, units)


def _write_rows(fh, rows, names, units):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([f"{n} ({units[n]})" if units.get(n) else n for n in names])
    for r in rows:
        d = asdict(r)
        w.writerow([_fmt(d[n]) for n in names])


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass
class TrackRow:
    frame: int
    drone: int
    true_theta_deg: float
    true_range_m: float
    true_doppler_hz: float
    est_theta_deg: float
    est_range_m: float
    est_doppler_hz: float
    rmse_theta_deg: float
    rmse_range_m: float
    rmse_doppler_hz: float
    failures: int
    config_hash: str

    UNITS = {"frame": "index", "drone": "index", "true_theta_deg": "deg", "true_range_m": "m",
             "true_doppler_hz": "Hz", "est_theta_deg": "deg", "est_range_m": "m", "est_doppler_hz": "Hz",
             "rmse_theta_deg": "deg", "rmse_range_m": "m", "rmse_doppler_hz": "Hz", "failures": "count",
             "config_hash": "sha256/16"}


def trajectory_truth(cfg: ExperimentConfig, num_frames: int, search: SearchSpec | None = None):
    """True drone states per frame under constant 2-D velocity.

    The base station sits at the origin with the array broadside along +y,
    so ``theta = atan2(x, y)``.  A drone's speed splits into the radial part
    implied by its Doppler (positive Doppler means closing in) and a
    tangential remainder towards increasing angle.  One frame lasts
    ``L (T + 1) / fs`` seconds.
    """
    search = search or cfg.search
    fr, lam = cfg.frame, cfg.geometry.wavelength
    dt = fr.subframes_per_frame * (fr.symbols_per_subframe + 1) / fr.sampling_rate
    states = []
    pos, vel = [], []
    for d in cfg.drones:
        radial = -d.doppler * lam
        if d.velocity < abs(radial) - 1e-9:
            raise ValueError(f"speed {d.velocity} m/s is below the radial speed {abs(radial)} m/s "
                             "implied by the Doppler shift")
        tang = math.sqrt(max(d.velocity ** 2 - radial ** 2, 0.0))
        u_r = np.array([math.sin(d.doa), math.cos(d.doa)])
        u_t = np.array([math.cos(d.doa), -math.sin(d.doa)])
        pos.append(d.range * u_r)
        vel.append(radial * u_r + tang * u_t)
    for v in range(num_frames):
        frame_states = []
        for j, d in enumerate(cfg.drones):
            p = pos[j] + vel[j] * dt * v
            rng_m = float(np.hypot(*p))
            theta = math.atan2(p[0], p[1])
            u_r = p / rng_m
            doppler = -float(vel[j] @ u_r) / lam
            lo_t, hi_t = search.theta_bounds
            if not (lo_t < theta < hi_t and search.range_bounds[0] < rng_m < search.range_bounds[1]
                    and search.doppler_bounds[0] < doppler < search.doppler_bounds[1]):
                raise ValueError(f"drone {j + 1} leaves the search region in frame {v + 1}: "
                                 f"theta={math.degrees(theta):.3f} deg, d={rng_m:.3f} m, fD={doppler:.3f} Hz")
            frame_states.append(DroneState(theta, rng_m, doppler, d.tx_power, d.velocity))
        states.append(tuple(frame_states))
    return states


def run_trajectory(cfg: ExperimentConfig, num_frames: int | None = None, threads: int = 1,
                   out=None) -> list[TrackRow]:
    """Localise every frame of a constant-velocity track (``cfg.trials`` trials per frame)."""
    frames = num_frames if num_frames is not None else cfg.frame.num_frames
    truth = trajectory_truth(cfg, frames)
    children = np.random.SeedSequence(cfg.seed).spawn(frames)
    rows = []
    point_cfg = replace(cfg, detectors=("mrc",), analytic=False)
    for v, (states, child) in enumerate(zip(truth, children), start=1):
        fc = replace(point_cfg, drones=states)
        l_last = fc.frame.subframes_per_frame
        res = simulate(fc, child, threads, keep_errors=True, subframes=[l_last])
        k = len(states)
        err = res.errors[:, 0]
        ok = np.all(np.isfinite(err), axis=1)
        mean_est = fc.truth + (err[ok].mean(axis=0) if ok.any() else np.nan)
        for j, d in enumerate(states):
            r = res.rmse[l_last - 1]
            rows.append(TrackRow(v, j + 1, math.degrees(d.doa), d.range, d.doppler,
                                 math.degrees(mean_est[j]), float(mean_est[k + j]), float(mean_est[2 * k + j]),
                                 math.degrees(r[j]), float(r[k + j]), float(r[2 * k + j]),
                                 res.failures, cfg.config_hash()))
    target = out if out is not None else cfg.out
    if target:
        write_csv(rows, target)
    return rows
