"""Monte-Carlo NMSE sweeps, their configuration and CSV output.

A sweep runs ``trials`` independent channel draws per speed.  Every trial
derives its random streams from ``(seed, trial)`` alone, so results do not
depend on how trials are spread over worker processes, and the reduction
always walks trials in index order.
"""

from __future__ import annotations

import csv
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel_sim import (
    ChannelTrace,
    SvChannelConfig,
    add_awgn,
    draw_paths,
    grf_sample,
    sv_trace,
)
from .errors import InvalidArgument, StemError
from .learning import (
    DEFAULT_DELTA_ANGLES,
    DEFAULT_DELTA_MAGS,
    DEFAULT_SPEEDS,
    GemFitOptions,
    FitReport,
    Observations,
    StemFitOptions,
    build_grid,
    fan_directions,
    fit_gem_kl,
    fit_stem_kl,
    zeta2_closed_form,
)
from .predictor import ar_fit, ar_predict, gpr_predict, no_prediction, pvec_fit_predict
from .stem_kernel import CARRIER_WAVELENGTH, AntennaArray, Coords, LagStack, StemHyper, lag_stack

PREDICTORS = ("no_prediction", "ar", "pvec", "stem_kl", "gem_kl")
CSV_HEADER = ("predictor", "snr_db", "speed_mps", "horizon", "nmse_linear", "nmse_db",
              "trials", "failures", "wallclock_s")

_AXES = {
    "x": (1.0, 0.0, 0.0), "-x": (-1.0, 0.0, 0.0),
    "y": (0.0, 1.0, 0.0), "-y": (0.0, -1.0, 0.0),
    "z": (0.0, 0.0, 1.0), "-z": (0.0, 0.0, -1.0),
}


@dataclass(frozen=True)
class GrfChannelConfig:
    """STEM Gaussian random field over a half-wavelength ULA.

    The sweep speed sets ``|v|``; ``v_dir`` fixes its direction.
    """

    n_bs: int = 32
    zeta2: float = 2.0
    delta: tuple[float, float, float] = (0.0, 0.0, 15.0)
    v_dir: tuple[float, float, float] = (0.0, 0.0, 1.0)
    carrier_lambda: float = CARRIER_WAVELENGTH
    pilot_period: float = 0.625e-3

    def array(self) -> AntennaArray:
        return AntennaArray.ula(self.n_bs, self.carrier_lambda / 2)


@dataclass(frozen=True)
class GemGridSpec:
    delta_mags: tuple[float, ...] = DEFAULT_DELTA_MAGS
    delta_dirs: tuple[tuple[float, float, float], ...] = tuple(
        map(tuple, fan_directions(DEFAULT_DELTA_ANGLES)))
    speeds: tuple[float, ...] = DEFAULT_SPEEDS
    headings: tuple[tuple[float, float, float], ...] = (_AXES["x"], _AXES["-x"], _AXES["z"], _AXES["-z"])


@dataclass(frozen=True)
class ExperimentConfig:
    channel: SvChannelConfig | GrfChannelConfig = field(default_factory=SvChannelConfig)
    predictors: tuple[str, ...] = PREDICTORS
    L_past: int = 2
    F_future: int = 5
    snr_grid_db: tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    horizon_snr_db: float = 5.0
    speeds: tuple[float, ...] = (10.0,)
    trials: int = 200
    seed: int = 0
    kernel_form: str = "integral"
    ar_order: int = 1
    pvec_order: int | None = None
    grid: GemGridSpec = field(default_factory=GemGridSpec)
    gem_max_iter: int = 100
    gem_tol: float = 1e-6
    gem_inner_steps: int = 1
    stem_max_iter: int = 100
    stem_tol: float = 1e-6
    stem_init_delta: tuple[float, float, float] = (0.0, 0.0, 1.0)
    stem_init_v: tuple[float, float, float] = (0.0, 0.0, 0.0)
    stem_init_zeta2: float | None = None  # None: closed-form energy estimate
    timing: bool = False
    output: str | None = None

    def __post_init__(self):
        if self.trials < 1 or self.L_past < 1 or self.F_future < 1:
            raise InvalidArgument("trials, L_past and F_future must all be >= 1")
        unknown = set(self.predictors) - set(PREDICTORS)
        if unknown or not self.predictors:
            raise InvalidArgument(f"predictors must be a non-empty subset of {PREDICTORS}")
        if not self.speeds or not self.snr_grid_db:
            raise InvalidArgument("speeds and snr_grid_db must be non-empty")

    def gem_grid(self, zeta2: float = 1.0):
        g = self.grid
        return build_grid(g.delta_mags, g.delta_dirs, g.speeds, g.headings,
                          zeta2=zeta2, k0=2 * math.pi / self.channel.carrier_lambda,
                          form=self.kernel_form)


@dataclass
class ResultRow:
    predictor: str
    snr_db: float
    speed_mps: float
    horizon: int
    nmse_linear: float
    nmse_db: float
    trials: int
    failures: int
    wallclock_s: float
    nmse_stderr: float = float("nan")  # standard error of nmse_linear; not written to CSV


def nmse(h_hat, h) -> float:
    """``||h_hat - h||^2 / ||h||^2``."""
    h_hat = np.asarray(h_hat)
    h = np.asarray(h)
    if h_hat.shape != h.shape:
        raise InvalidArgument("h_hat and h must have the same shape")
    den = float(np.sum(np.abs(h) ** 2))
    if den == 0:
        raise InvalidArgument("NMSE undefined for a zero truth vector")
    return float(np.sum(np.abs(h_hat - h) ** 2)) / den


def to_db(x: float) -> float:
    if x > 0:
        return 10.0 * math.log10(x)
    return -math.inf if x == 0 else math.nan


# ---------------------------------------------------------------------------
# config files


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _vec3(text):
    v = _floats(text)
    if len(v) != 3:
        raise InvalidArgument(f"expected three numbers, got {text!r}")
    return v


def _directions(text):
    """``;``-separated list: axis tokens (``x``, ``-z``), ``30deg``, ``a:b:step deg`` or ``a, b, c``."""
    out = []
    for item in (s.strip() for s in text.split(";")):
        if not item:
            continue
        if item in _AXES:
            out.append(_AXES[item])
        elif item.endswith("deg"):
            body = item[:-3].strip()
            if ":" in body:
                a, b, step = (float(v) for v in body.split(":"))
                angles = np.arange(a, b + 0.5 * step, step)
            else:
                angles = [float(body)]
            out.extend(map(tuple, fan_directions(angles)))
        else:
            out.append(_vec3(item))
    if not out:
        raise InvalidArgument("direction list is empty")
    return tuple(out)


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InvalidArgument(f"expected a boolean, got {text!r}")


def _opt_float(text):
    return None if text.lower() in ("auto", "none") else float(text)


def _opt_int(text):
    return None if text.lower() in ("auto", "none") else int(text)


def _heading(text):
    if text.lower() in ("random", "none"):
        return None
    v = _floats(text)
    if len(v) != 2:
        raise InvalidArgument("channel.heading takes 'random' or two numbers (x, z)")
    return v


def _range2(text):
    v = _floats(text)
    if len(v) != 2:
        raise InvalidArgument(f"expected two numbers, got {text!r}")
    return v


def _deg_range(text):
    a, b = _range2(text)
    return (math.radians(a), math.radians(b))


def _names(text):
    return tuple(s.strip() for s in text.replace(";", ",").split(",") if s.strip())


# key -> (section, field, parser); section: "sv", "grf", "grid", None (ExperimentConfig)
SCHEMA = {
    "channel.kind": ("kind", "kind", str),
    "channel.n_bs": ("channel", "n_bs", int),
    "channel.wavelength": ("channel", "carrier_lambda", float),
    "channel.pilot_period": ("channel", "pilot_period", float),
    "channel.n_paths": ("sv", "n_paths", int),
    "channel.rician_db": ("sv", "rician_db", float),
    "channel.angle_range_deg": ("sv", "angle_range", _deg_range),
    "channel.distance_range": ("sv", "distance_range", _range2),
    "channel.spacing": ("sv", "element_spacing", _opt_float),
    "channel.heading": ("sv", "heading", _heading),
    "channel.calibration_draws": ("sv", "calibration_draws", int),
    "channel.grf_zeta2": ("grf", "zeta2", float),
    "channel.grf_delta": ("grf", "delta", _vec3),
    "channel.grf_v_dir": ("grf", "v_dir", _vec3),
    "bench.predictors": (None, "predictors", _names),
    "bench.L": (None, "L_past", int),
    "bench.F": (None, "F_future", int),
    "bench.snr_db": (None, "snr_grid_db", _floats),
    "bench.horizon_snr_db": (None, "horizon_snr_db", float),
    "bench.speeds": (None, "speeds", _floats),
    "bench.trials": (None, "trials", int),
    "bench.seed": (None, "seed", int),
    "bench.timing": (None, "timing", _bool),
    "bench.output": (None, "output", str),
    "kernel.form": (None, "kernel_form", str),
    "ar.order": (None, "ar_order", int),
    "pvec.order": (None, "pvec_order", _opt_int),
    "gem.delta_mags": ("grid", "delta_mags", _floats),
    "gem.delta_dirs": ("grid", "delta_dirs", _directions),
    "gem.speeds": ("grid", "speeds", _floats),
    "gem.headings": ("grid", "headings", _directions),
    "gem.max_iter": (None, "gem_max_iter", int),
    "gem.tol": (None, "gem_tol", float),
    "gem.inner_steps": (None, "gem_inner_steps", int),
    "stem.max_iter": (None, "stem_max_iter", int),
    "stem.tol": (None, "stem_tol", float),
    "stem.init_delta": (None, "stem_init_delta", _vec3),
    "stem.init_v": (None, "stem_init_v", _vec3),
    "stem.init_zeta2": (None, "stem_init_zeta2", _opt_float),
}


def schema_help() -> str:
    lines = ["config keys (one 'key = value' per line, '#' starts a comment):"]
    lines += [f"  {k}" for k in SCHEMA]
    return "\n".join(lines)


def parse_config(text: str, *, source: str = "<config>") -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from flat ``section.key = value`` text."""
    parts: dict[str, dict] = {"kind": {}, "channel": {}, "sv": {}, "grf": {}, "grid": {}, None: {}}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise InvalidArgument(f"{source}:{lineno}: unknown key {key!r}")
        section, name, parse = SCHEMA[key]
        try:
            parts[section][name] = parse(value)
        except (ValueError, InvalidArgument) as exc:
            raise InvalidArgument(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    kind = parts["kind"].get("kind", "sv")
    try:
        if kind == "sv":
            if parts["grf"]:
                raise InvalidArgument("channel.grf_* keys need channel.kind = grf")
            channel = SvChannelConfig(**parts["channel"], **parts["sv"])
        elif kind == "grf":
            if parts["sv"]:
                raise InvalidArgument("SV channel keys are not valid with channel.kind = grf")
            channel = GrfChannelConfig(**parts["channel"], **parts["grf"])
        else:
            raise InvalidArgument(f"channel.kind must be 'sv' or 'grf', got {kind!r}")
        return ExperimentConfig(channel=channel, grid=GemGridSpec(**parts["grid"]), **parts[None])
    except InvalidArgument as exc:
        raise InvalidArgument(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


# ---------------------------------------------------------------------------
# trials


def frame_times(cfg: ExperimentConfig) -> np.ndarray:
    return np.arange(cfg.L_past + cfg.F_future) * cfg.channel.pilot_period


def ground_truth(cfg: ExperimentConfig, speed: float, trial: int) -> np.ndarray:
    """Ground-truth snapshots ``(L + F, N)`` for one trial."""
    rng = np.random.default_rng([cfg.seed, trial, 0])
    times = frame_times(cfg)
    ch = cfg.channel
    if isinstance(ch, SvChannelConfig):
        chs = replace(ch, user_speed=speed)
        return sv_trace(chs, draw_paths(chs, rng), times).snapshots
    v_dir = np.asarray(ch.v_dir, dtype=float)
    v = speed * v_dir / np.linalg.norm(v_dir)
    hyper = StemHyper(ch.zeta2, np.asarray(ch.delta), v, 2 * math.pi / ch.carrier_lambda, cfg.kernel_form)
    coords = ch.array().coords(times)
    return grf_sample(coords, hyper, rng)[0].reshape(times.size, ch.n_bs)


_STACKS: dict = {}


def _unit_stack(cfg: ExperimentConfig, coords: Coords) -> LagStack:
    # sub-kernels at zeta2 = 1, scaled per trial by the energy estimate;
    # every bench trial shares the same pilot coordinates
    key = (cfg.grid, cfg.kernel_form, cfg.channel.carrier_lambda,
           coords.x.tobytes(), coords.t.tobytes(), coords.u.tobytes())
    if key not in _STACKS:
        _STACKS.clear()
        _STACKS[key] = lag_stack(coords, cfg.gem_grid(1.0))
    return _STACKS[key]


def fit_hyper(name: str, cfg: ExperimentConfig, obs: Observations) -> FitReport:
    """Run the ``stem_kl`` or ``gem_kl`` learner with the settings in ``cfg``."""
    k0 = 2 * math.pi / cfg.channel.carrier_lambda
    if name == "stem_kl":
        z2 = zeta2_closed_form(obs) if cfg.stem_init_zeta2 is None else cfg.stem_init_zeta2
        init = StemHyper(max(z2, 1e-6), np.asarray(cfg.stem_init_delta), np.asarray(cfg.stem_init_v),
                         k0, cfg.kernel_form)
        return fit_stem_kl(obs, init, StemFitOptions(max_iter=cfg.stem_max_iter, tol=cfg.stem_tol))
    if name == "gem_kl":
        z2 = zeta2_closed_form(obs)
        unit = _unit_stack(cfg, obs.coords)
        stack = LagStack(unit.values * z2, unit.inverse, unit.size)
        opts = GemFitOptions(max_iter=cfg.gem_max_iter, tol=cfg.gem_tol,
                             inner_steps=cfg.gem_inner_steps, zeta2=z2)
        return fit_gem_kl(obs, cfg.gem_grid(z2), opts, stack=stack)
    raise InvalidArgument(f"no kernel learner named {name!r}")


def predict_with(name: str, cfg: ExperimentConfig, noisy: ChannelTrace, obs: Observations,
                 future: Coords, horizon: int) -> np.ndarray:
    """Predicted snapshots ``(horizon, N)`` from predictor ``name``."""
    if name == "no_prediction":
        return no_prediction(noisy, horizon)
    if name == "ar":
        return ar_predict(ar_fit(noisy, cfg.ar_order), noisy, horizon)
    if name == "pvec":
        return pvec_fit_predict(noisy, cfg.pvec_order, horizon)
    rep = fit_hyper(name, cfg, obs)
    mean = gpr_predict(obs, future, rep.hyper, return_cov=False).mean
    return mean.reshape(horizon, -1)


def _run_trial(cfg: ExperimentConfig, snrs: tuple[float, ...], speed: float, trial: int):
    """Per-horizon NMSE ratios for every (snr, predictor); ``None`` marks a failure."""
    truth = ground_truth(cfg, speed, trial)
    L, F = cfg.L_past, cfg.F_future
    times = frame_times(cfg)
    array = cfg.channel.array()
    past, future = array.coords(times[:L]), array.coords(times[L:])
    target = truth[L:]
    den = np.sum(np.abs(target) ** 2, axis=1)
    out = {}
    for si, snr_db in enumerate(snrs):
        snr = 10.0 ** (snr_db / 10.0)
        noise_seed = np.random.SeedSequence([cfg.seed, trial, 1, si])
        noisy = add_awgn(ChannelTrace(truth[:L], times[:L]), snr, noise_seed)
        obs = Observations(noisy.snapshots.reshape(-1), past, 1.0 / snr)
        for name in cfg.predictors:
            start = time.perf_counter()
            try:
                pred = predict_with(name, cfg, noisy, obs, future, F)
                ratios = np.sum(np.abs(pred - target) ** 2, axis=1) / den
                if not np.all(np.isfinite(ratios)):
                    raise FloatingPointError("non-finite prediction")
            except (StemError, np.linalg.LinAlgError, ArithmeticError):
                ratios = None
            out[si, name] = (ratios, time.perf_counter() - start)
    return out


def _trial_task(args):
    return _run_trial(*args)


def _sweep(cfg: ExperimentConfig, snrs, jobs: int) -> list[ResultRow]:
    snrs = tuple(float(s) for s in snrs)
    tasks = [(cfg, snrs, float(v), t) for v in cfg.speeds for t in range(cfg.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_trial_task(t) for t in tasks]

    rows = []
    for vi, speed in enumerate(cfg.speeds):
        block = results[vi * cfg.trials:(vi + 1) * cfg.trials]
        for si, snr_db in enumerate(snrs):
            for name in cfg.predictors:
                ok = [r[si, name][0] for r in block if r[si, name][0] is not None]
                clock = sum(r[si, name][1] for r in block) if cfg.timing else 0.0
                arr = np.array(ok) if ok else np.full((0, cfg.F_future), np.nan)
                for f in range(cfg.F_future):
                    col = arr[:, f]
                    mean = float(np.mean(col)) if col.size else math.nan
                    se = float(np.std(col, ddof=1) / math.sqrt(col.size)) if col.size > 1 else math.nan
                    rows.append(ResultRow(name, snr_db, float(speed), f + 1, mean, to_db(mean),
                                          cfg.trials, cfg.trials - col.size, clock, se))
    rows.sort(key=lambda r: (r.predictor, r.snr_db, r.speed_mps, r.horizon))
    return rows


def run_snr_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[ResultRow]:
    """NMSE per (predictor, SNR, speed, horizon) over ``cfg.snr_grid_db``."""
    return _sweep(cfg, cfg.snr_grid_db, jobs)


def run_horizon_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[ResultRow]:
    """NMSE per (predictor, speed, horizon) at the single SNR ``cfg.horizon_snr_db``."""
    return _sweep(cfg, (cfg.horizon_snr_db,), jobs)


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# CSV


def _num(x: float) -> str:
    return format(float(x), ".17e")


def emit_csv(rows, path) -> None:
    """Write ``rows`` under :data:`CSV_HEADER`; ``path`` may be ``"-"`` for stdout."""
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow((r.predictor, _num(r.snr_db), _num(r.speed_mps), r.horizon,
                        _num(r.nmse_linear), _num(r.nmse_db), r.trials, r.failures,
                        _num(r.wallclock_s)))

    if str(path) == "-":
        write(sys.stdout)
        return
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            write(fh)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror}") from exc


def parse_csv(path) -> list[ResultRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise InvalidArgument(f"{path}: unexpected header {header}")
        rows = []
        for rec in reader:
            p, snr, spd, hz, lin, db, tr, fl, wc = rec
            rows.append(ResultRow(p, float(snr), float(spd), int(hz), float(lin), float(db),
                                  int(tr), int(fl), float(wc)))
    return rows


def growth_slope_db(rows, predictor: str, snr_db: float, speed: float) -> float:
    """Least-squares slope (dB per frame) of NMSE over the horizon axis."""
    sel = sorted((r.horizon, r.nmse_db) for r in rows
                 if r.predictor == predictor and r.snr_db == snr_db and r.speed_mps == speed)
    if len(sel) < 2:
        raise InvalidArgument("need at least two horizons for a slope")
    f, db = np.array(sel).T
    return float(np.polyfit(f, db, 1)[0])


__all__ = [
    "CSV_HEADER", "PREDICTORS", "ExperimentConfig", "GemGridSpec", "GrfChannelConfig", "ResultRow",
    "emit_csv", "fit_hyper", "frame_times", "ground_truth", "growth_slope_db", "predict_with", "load_config", "nmse", "parse_config", "parse_csv",
    "run_horizon_sweep", "run_snr_sweep", "schema_help", "to_db",
]
