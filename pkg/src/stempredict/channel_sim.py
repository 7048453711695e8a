"""Ground-truth channel generation.

* A near-field Saleh-Valenzuela (SV) multipath channel seen by a uniform
  linear array on the x-axis, with a user moving in the x-z plane.
  Scatterers are fixed in space; every snapshot recomputes the exact
  geometry, so each path carries the Doppler of its user-scatterer leg.
* Gaussian random field (GRF) traces drawn from a STEM covariance.
* Complex AWGN at a given SNR and small coherence-time/Doppler helpers.
"""

from __future__ import annotations

import csv
import functools
import math
import sys
from dataclasses import astuple, dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .errors import InvalidArgument, NotPositiveDefinite
from .stem_kernel import CARRIER_WAVELENGTH, AntennaArray, Coords, correlation_matrix

# seed of the calibration ensemble used for energy normalization
_CALIBRATION_SEED = 20240611


@dataclass(frozen=True)
class SvChannelConfig:
    n_bs: int = 32
    n_paths: int = 10
    rician_db: float = 10.0
    angle_range: tuple[float, float] = (-math.pi / 3, math.pi / 3)
    distance_range: tuple[float, float] = (5.0, 30.0)
    carrier_lambda: float = CARRIER_WAVELENGTH
    element_spacing: float | None = None  # None: half a wavelength
    user_speed: float = 10.0
    # unit direction (x, z); None draws a uniform direction per trial
    heading: tuple[float, float] | None = None
    pilot_period: float = 0.625e-3
    calibration_draws: int = 1000

    def __post_init__(self):
        if self.n_bs < 2 or self.n_bs % 2:
            raise InvalidArgument("n_bs must be an even integer >= 2")
        if self.n_paths < 0:
            raise InvalidArgument("n_paths must be >= 0")
        lo, hi = self.distance_range
        if not 0 < lo <= hi:
            raise InvalidArgument("distance_range must be positive and ordered")
        if self.carrier_lambda <= 0 or self.pilot_period <= 0:
            raise InvalidArgument("carrier_lambda and pilot_period must be > 0")
        if self.heading is not None:
            hx, hz = self.heading
            if abs(math.hypot(hx, hz) - 1.0) > 1e-9:
                raise InvalidArgument("heading must be a unit (x, z) vector")

    @property
    def spacing(self) -> float:
        return self.carrier_lambda / 2 if self.element_spacing is None else self.element_spacing

    @property
    def k0(self) -> float:
        return 2.0 * math.pi / self.carrier_lambda

    @property
    def indices(self) -> np.ndarray:
        half = self.n_bs // 2
        return np.arange(-half, half)

    def array(self, polarization=(0.0, 1.0, 0.0)) -> AntennaArray:
        return AntennaArray.ula(self.n_bs, self.spacing, polarization)


@dataclass
class ChannelTrace:
    """Channel (or pilot) snapshots, shape ``(T, N_BS)``, at increasing ``times``."""

    snapshots: np.ndarray
    times: np.ndarray
    ground_truth: bool = True

    def __post_init__(self):
        self.snapshots = np.atleast_2d(np.asarray(self.snapshots, dtype=complex))
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        if self.snapshots.shape[0] != self.times.size:
            raise InvalidArgument("snapshots and times must have equal length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise InvalidArgument("times must be strictly increasing")

    def __len__(self):
        return self.times.size

    @property
    def n_elements(self) -> int:
        return self.snapshots.shape[1]


@dataclass(frozen=True)
class SvPaths:
    """Per-trial random draw: initial user position, fixed scatterers and gains."""

    user0: np.ndarray
    velocity: np.ndarray
    scatterers: np.ndarray
    gains: np.ndarray
    los_gain: complex


def steering_vector(phi: float, r: float, cfg: SvChannelConfig) -> np.ndarray:
    """Near-field steering vector with entries ``exp(i k0 (r_n - r)) / sqrt(N)``.

    ``r_n = sqrt(r^2 + n^2 d^2 - 2 n d r sin(phi))`` is the distance from
    element ``n`` to a source at range ``r`` and angle ``phi`` from broadside.
    """
    if not r > 0:
        raise InvalidArgument("r must be > 0")
    nd = cfg.indices * cfg.spacing
    rn = np.sqrt(r * r + nd * nd - 2.0 * nd * r * math.sin(phi))
    return np.exp(1j * cfg.k0 * (rn - r)) / math.sqrt(cfg.n_bs)


def _polar(point) -> tuple[float, float]:
    x, _, z = point
    return math.atan2(x, z), math.hypot(x, z)


def _from_polar(phi, r):
    return np.array([r * math.sin(phi), 0.0, r * math.cos(phi)])


def draw_paths(cfg: SvChannelConfig, rng: np.random.Generator) -> SvPaths:
    lo_a, hi_a = cfg.angle_range
    lo_r, hi_r = cfg.distance_range
    user0 = _from_polar(rng.uniform(lo_a, hi_a), rng.uniform(lo_r, hi_r))
    if cfg.heading is None:
        ang = rng.uniform(0.0, 2.0 * math.pi)
        hx, hz = math.cos(ang), math.sin(ang)
    else:
        hx, hz = cfg.heading
    velocity = cfg.user_speed * np.array([hx, 0.0, hz])
    L = cfg.n_paths
    phis = rng.uniform(lo_a, hi_a, size=L)
    rs = rng.uniform(lo_r, hi_r, size=L)
    scatterers = np.array([_from_polar(p, r) for p, r in zip(phis, rs)]).reshape(L, 3)
    kappa = 10.0 ** (cfg.rician_db / 10.0)
    nlos_power = 1.0 / (kappa + 1.0) if L else 0.0
    gains = np.sqrt(nlos_power / (2 * max(L, 1))) * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
    los_amp = math.sqrt(kappa / (kappa + 1.0)) if L else 1.0
    los_gain = los_amp * np.exp(1j * rng.uniform(0.0, 2.0 * math.pi))
    return SvPaths(user0, velocity, scatterers, gains, complex(los_gain))


def _raw_channel(t: float, cfg: SvChannelConfig, paths: SvPaths) -> np.ndarray:
    user = paths.user0 + paths.velocity * t
    phi0, r0 = _polar(user)
    h = paths.los_gain * np.exp(1j * cfg.k0 * r0) * steering_vector(phi0, r0, cfg)
    for s, a in zip(paths.scatterers, paths.gains):
        phi, r = _polar(s)
        leg = float(np.linalg.norm(user - s))
        h = h + a * np.exp(1j * cfg.k0 * (r + leg)) * steering_vector(phi, r, cfg)
    return h


@functools.lru_cache(maxsize=32)
def _energy_scale(cfg_key: tuple) -> float:
    cfg = SvChannelConfig(*cfg_key)
    rng = np.random.default_rng(_CALIBRATION_SEED)
    energy = 0.0
    for _ in range(cfg.calibration_draws):
        energy += float(np.sum(np.abs(_raw_channel(0.0, cfg, draw_paths(cfg, rng))) ** 2))
    energy /= cfg.calibration_draws
    return math.sqrt(cfg.n_bs / energy)


def energy_scale(cfg: SvChannelConfig) -> float:
    """Constant making ``E ||h||^2 = N_BS`` over the calibration ensemble."""
    return _energy_scale(astuple(cfg))


def sv_channel_at(t: float, cfg: SvChannelConfig, paths: SvPaths, *, normalize: bool = True) -> np.ndarray:
    h = _raw_channel(t, cfg, paths)
    return h * energy_scale(cfg) if normalize else h


def sv_trace(cfg: SvChannelConfig, paths: SvPaths, times) -> ChannelTrace:
    times = np.asarray(times, dtype=float)
    scale = energy_scale(cfg)
    snaps = np.array([_raw_channel(t, cfg, paths) for t in times]) * scale
    return ChannelTrace(snaps, times, True)


def grf_sample(coords: Coords, hyper, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """``size`` draws of ``CN(0, K)``, shape ``(size, len(coords))``."""
    K = correlation_matrix(coords, coords, hyper)
    n = K.shape[0]
    scale = max(float(np.real(np.trace(K))) / n, 1e-300)
    jitter = 0.0
    eps = 1e-12 * scale
    while True:
        try:
            L = la.cholesky(K + jitter * np.eye(n), lower=True)
            break
        except la.LinAlgError:
            if eps > 1e-3 * scale:
                raise NotPositiveDefinite("GRF covariance not factorizable") from None
            jitter, eps = eps, eps * 10
    w = (rng.standard_normal((size, n)) + 1j * rng.standard_normal((size, n))) / math.sqrt(2.0)
    return w @ L.T


def grf_sample_trace(coords: Coords, hyper, seed, n_elements: int | None = None) -> ChannelTrace:
    """One GRF draw over time-major ``coords`` reshaped into a trace.

    ``n_elements`` defaults to the size of the first block of equal times.
    """
    rng = np.random.default_rng(seed)
    sample = grf_sample(coords, hyper, rng)[0]
    t = coords.t
    if n_elements is None:
        n_elements = int(np.argmax(t != t[0])) if np.any(t != t[0]) else t.size
    if t.size % n_elements:
        raise InvalidArgument("coords do not form equal time blocks")
    times = t[::n_elements]
    return ChannelTrace(sample.reshape(-1, n_elements), times, True)


def add_awgn(trace: ChannelTrace, snr_linear: float, seed) -> ChannelTrace:
    if not snr_linear > 0:
        raise InvalidArgument("snr_linear must be > 0")
    rng = np.random.default_rng(seed)
    shape = trace.snapshots.shape
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5 / snr_linear)
    return ChannelTrace(trace.snapshots + noise, trace.times.copy(), False)


def coherence_time(wavelength: float, v: float) -> float:
    if not v > 0:
        raise InvalidArgument("coherence time needs v > 0")
    return wavelength / (2.0 * v)


def doppler_shift(v_r: float, wavelength: float) -> float:
    return v_r / wavelength


CSV_COLUMNS = ("time", "antenna", "re", "im", "kind")


def write_trace_csv(trace: ChannelTrace, path) -> None:
    """One row per (snapshot, antenna); ``kind`` is ``truth`` or ``noisy``.

    ``path`` may be ``"-"`` for stdout.
    """
    kind = "truth" if trace.ground_truth else "noisy"

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for t, snap in zip(trace.times, trace.snapshots):
            for n, val in enumerate(snap):
                w.writerow((repr(float(t)), n, repr(float(val.real)), repr(float(val.imag)), kind))

    if str(path) == "-":
        write(sys.stdout)
        return
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            write(fh)
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc.strerror}") from exc


def read_trace_csv(path) -> ChannelTrace:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidArgument(f"{path}: empty trace file")
    try:
        times = sorted({float(r["time"]) for r in rows})
        n_el = max(int(r["antenna"]) for r in rows) + 1
        index = {t: i for i, t in enumerate(times)}
        snaps = np.zeros((len(times), n_el), dtype=complex)
        for r in rows:
            snaps[index[float(r["time"])], int(r["antenna"])] = complex(float(r["re"]), float(r["im"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgument(f"{path}: malformed trace ({exc})") from None
    return ChannelTrace(snaps, np.array(times), rows[0]["kind"] == "truth")
