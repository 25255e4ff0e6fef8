"""Ground-truth attitude trajectories and ideal IMU outputs.

Truth is closed form: every rotation segment turns the body about a fixed
axis, so the attitude is ``C_bn(t) = C_bn(t_s) @ so3_exp(theta(t) * u)`` with
``theta`` the analytic integral of the rate profile. No ODE solver is involved.

Sampling convention: sample ``k`` is taken at ``t_k = k / sample_rate``.
Segment boundaries snap to the grid and are right-continuous, i.e. the
sample at ``t_start`` already carries the rotation rate and the sample at
``t_end`` is static again. Each sample stores the index of the segment it
belongs to (``-1`` for implicit static gaps) so that integrators can tell
where the motion is discontinuous.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .earth import EarthParams
from .errors import OutsideRotation, SegmentTooShort, SimulationError
from .so3 import euler_to_dcm, so3_exp


class SegmentKind(str, Enum):
    STATIC = "static"
    CONST_ROTATION = "const_rotation"
    VARYING_RATE = "varying_rate"


@dataclass(frozen=True)
class RateProfile:
    """``rate(tau) = bias + amplitude * sin(angular_frequency * tau + phase)`` in rad/s.

    ``tau`` is the time since the segment start.
    """

    bias: float
    amplitude: float = 0.0
    angular_frequency: float = 0.0
    phase: float = 0.0

    def rate(self, tau):
        return self.bias + self.amplitude * np.sin(self.angular_frequency * tau + self.phase)

    def rate_dot(self, tau):
        w = self.angular_frequency
        return self.amplitude * w * np.cos(w * tau + self.phase)

    def rate_ddot(self, tau):
        w = self.angular_frequency
        return -self.amplitude * w * w * np.sin(w * tau + self.phase)

    def angle(self, tau):
        w = self.angular_frequency
        if w == 0.0:
            return (self.bias + self.amplitude * np.sin(self.phase)) * tau
        return self.bias * tau + self.amplitude / w * (np.cos(self.phase) - np.cos(w * tau + self.phase))


@dataclass(frozen=True)
class ScenarioSegment:
    """One motion phase.

    ``axis`` is a unit vector in the body frame, or in the navigation frame when
    ``frame == "nav"``. A nav-frame axis is mapped to body axes with the attitude
    at segment start; a rotation about a fixed body axis keeps that axis fixed in
    the navigation frame too, so both descriptions are the same physical motion.
    """

    kind: SegmentKind
    t_start: float
    t_end: float
    axis: tuple = (0.0, 1.0, 0.0)
    rate: float = 0.0
    profile: Optional[RateProfile] = None
    frame: str = "body"

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise SimulationError("segment must end after it starts")
        axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(axis)
        if self.kind is not SegmentKind.STATIC:
            if n == 0:
                raise SimulationError("rotation axis must be non-zero")
            object.__setattr__(self, "axis", tuple(axis / n))
        if self.kind is SegmentKind.CONST_ROTATION and self.rate == 0.0:
            raise SimulationError("constant rotation needs a non-zero rate")
        if self.kind is SegmentKind.VARYING_RATE and self.profile is None:
            raise SimulationError("varying-rate segment needs a rate profile")
        if self.frame not in ("body", "nav"):
            raise SimulationError(f"unknown axis frame {self.frame!r}")

    @property
    def rotating(self) -> bool:
        return self.kind is not SegmentKind.STATIC

    def rate_profile(self) -> RateProfile:
        if self.kind is SegmentKind.CONST_ROTATION:
            return RateProfile(bias=self.rate)
        if self.kind is SegmentKind.VARYING_RATE:
            return self.profile
        return RateProfile(bias=0.0)


@dataclass(frozen=True)
class Scenario:
    earth: EarthParams
    initial_euler: tuple = (0.0, 0.0, 0.0)  # roll, yaw, pitch [rad]
    segments: tuple = ()
    sample_rate: float = 100.0
    duration: float = 600.0
    true_bg: tuple = (0.0, 0.0, 0.0)
    true_ba: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if self.sample_rate <= 0 or self.duration <= 0:
            raise SimulationError("sample rate and duration must be positive")
        prev_end = 0.0
        for s in segs:
            if s.t_start < prev_end - 1e-12:
                raise SimulationError("segments must be sorted and non-overlapping")
            if s.t_end > self.duration + 1e-12:
                raise SimulationError("segment extends beyond the scenario duration")
            prev_end = s.t_end

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate)) + 1

    @property
    def initial_dcm(self):
        return euler_to_dcm(*self.initial_euler)

    def index_of(self, t: float) -> int:
        return int(round(t * self.sample_rate))


@dataclass
class Truth:
    """Columnar truth trajectory, one row per sample."""

    t: np.ndarray
    C_bn: np.ndarray  # (N, 3, 3)
    omega_nb_b: np.ndarray
    d_omega_nb_b: np.ndarray
    dd_omega_nb_b: np.ndarray
    g_b: np.ndarray
    omega_ie_b: np.ndarray
    segment: np.ndarray  # (N,) int, -1 for implicit static gaps

    def __len__(self):
        return len(self.t)

    def sample(self, i: int) -> "TruthSample":
        return TruthSample(
            t=float(self.t[i]),
            C_bn=self.C_bn[i],
            omega_nb_b=self.omega_nb_b[i],
            g_b=self.g_b[i],
            omega_ie_b=self.omega_ie_b[i],
            d_omega_nb_b=self.d_omega_nb_b[i],
            dd_omega_nb_b=self.dd_omega_nb_b[i],
            rotating=bool(np.any(self.omega_nb_b[i] != 0.0)),
        )


@dataclass(frozen=True)
class TruthSample:
    t: float
    C_bn: np.ndarray
    omega_nb_b: np.ndarray
    g_b: np.ndarray
    omega_ie_b: np.ndarray
    d_omega_nb_b: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dd_omega_nb_b: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotating: bool = False


@dataclass(frozen=True)
class ImuRecord:
    """A single IMU sample with optional first and second time derivatives."""

    t: float
    omega_ib_b: np.ndarray
    f_b: np.ndarray
    d1_omega: Optional[np.ndarray] = None
    d2_omega: Optional[np.ndarray] = None
    d1_f: Optional[np.ndarray] = None
    d2_f: Optional[np.ndarray] = None
    segment: int = -1

    @property
    def has_derivatives(self) -> bool:
        return all(
            x is not None and np.all(np.isfinite(x)) for x in (self.d1_omega, self.d2_omega, self.d1_f, self.d2_f)
        )


_DERIV_FIELDS = ("d1_gyro", "d2_gyro", "d1_accel", "d2_accel")


@dataclass
class ImuStream:
    """Columnar IMU stream.

    Derivative arrays are either ``None`` or shaped like ``gyro``; rows where a
    derivative is unavailable (finite-difference boundaries) hold NaN.
    """

    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    segment: np.ndarray
    d1_gyro: Optional[np.ndarray] = None
    d2_gyro: Optional[np.ndarray] = None
    d1_accel: Optional[np.ndarray] = None
    d2_accel: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.t)

    @property
    def has_derivatives(self) -> bool:
        return all(getattr(self, name) is not None for name in _DERIV_FIELDS)

    @property
    def derivative_mask(self) -> np.ndarray:
        """True where all four derivative vectors are available."""
        if not self.has_derivatives:
            return np.zeros(len(self), dtype=bool)
        ok = np.ones(len(self), dtype=bool)
        for name in _DERIV_FIELDS:
            ok &= np.all(np.isfinite(getattr(self, name)), axis=1)
        return ok

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self) > 1 else 0.0

    def record(self, i: int) -> ImuRecord:
        get = lambda name: None if getattr(self, name) is None else getattr(self, name)[i]
        return ImuRecord(
            t=float(self.t[i]),
            omega_ib_b=self.gyro[i],
            f_b=self.accel[i],
            d1_omega=get("d1_gyro"),
            d2_omega=get("d2_gyro"),
            d1_f=get("d1_accel"),
            d2_f=get("d2_accel"),
            segment=int(self.segment[i]),
        )

    def take(self, index) -> "ImuStream":
        """Subset of rows selected by an index array, slice or boolean mask."""
        kw = {name: (None if getattr(self, name) is None else getattr(self, name)[index]) for name in _DERIV_FIELDS}
        return ImuStream(t=self.t[index], gyro=self.gyro[index], accel=self.accel[index], segment=self.segment[index], **kw)

    def window(self, t0: float, t1: float) -> "ImuStream":
        """Samples with ``t0 <= t < t1`` (to within a quarter sample)."""
        eps = 0.25 * self.dt
        return self.take((self.t >= t0 - eps) & (self.t < t1 - eps))

    def segment_samples(self, seg_id: int) -> "ImuStream":
        return self.take(self.segment == seg_id)

    def copy(self) -> "ImuStream":
        kw = {name: (None if getattr(self, name) is None else getattr(self, name).copy()) for name in _DERIV_FIELDS}
        return ImuStream(t=self.t.copy(), gyro=self.gyro.copy(), accel=self.accel.copy(), segment=self.segment.copy(), **kw)


def segment_runs(segment: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges of consecutive samples sharing a segment id."""
    if len(segment) == 0:
        return []
    cuts = np.flatnonzero(np.diff(segment) != 0) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [len(segment)]])
    return list(zip(starts.tolist(), ends.tolist()))


def integrate_truth(s: Scenario) -> Truth:
    """Closed-form attitude trajectory and body-frame reference vectors."""
    n = s.n_samples
    k = np.arange(n)
    t = k / s.sample_rate
    c_bn = np.empty((n, 3, 3))
    w_nb = np.zeros((n, 3))
    dw_nb = np.zeros((n, 3))
    ddw_nb = np.zeros((n, 3))
    seg_id = np.full(n, -1, dtype=int)

    c_cur = s.initial_dcm
    cursor = 0
    for j, seg in enumerate(s.segments):
        ks = min(s.index_of(seg.t_start), n)
        ke = min(s.index_of(seg.t_end), n)
        c_bn[cursor:ks] = c_cur
        seg_id[ks:ke] = j
        if not seg.rotating:
            c_bn[ks:ke] = c_cur
            cursor = ke
            continue
        axis = np.asarray(seg.axis)
        if seg.frame == "nav":
            axis = c_cur.T @ axis
            axis /= np.linalg.norm(axis)
        prof = seg.rate_profile()
        tau = (k[ks:ke] - ks) / s.sample_rate
        c_bn[ks:ke] = c_cur @ so3_exp(prof.angle(tau)[:, None] * axis)
        w_nb[ks:ke] = prof.rate(tau)[:, None] * axis
        dw_nb[ks:ke] = prof.rate_dot(tau)[:, None] * axis
        ddw_nb[ks:ke] = prof.rate_ddot(tau)[:, None] * axis
        c_cur = c_cur @ so3_exp(prof.angle((ke - ks) / s.sample_rate) * axis)
        cursor = ke
    c_bn[cursor:] = c_cur

    c_nb = np.swapaxes(c_bn, 1, 2)
    g_b = c_nb @ s.earth.gravity_n
    w_ie_b = c_nb @ s.earth.omega_ie_n
    return Truth(t=t, C_bn=c_bn, omega_nb_b=w_nb, d_omega_nb_b=dw_nb, dd_omega_nb_b=ddw_nb,
                 g_b=g_b, omega_ie_b=w_ie_b, segment=seg_id)


def _derivatives(w, dw, ddw, g_b, w_ie_b):
    """Analytic derivatives of gyro and accelerometer outputs.

    Body-frame images of constant navigation vectors obey ``x' = -w x x``.
    """
    x = np.cross
    dw_ie = -x(w, w_ie_b)
    ddw_ie = -x(dw, w_ie_b) - x(w, dw_ie)
    dg = -x(w, g_b)
    ddg = -x(dw, g_b) - x(w, dg)
    return dw + dw_ie, ddw + ddw_ie, -dg, -ddg


def emit_imu(truth: Truth, true_bg, true_ba, derivatives: bool = True) -> ImuStream:
    """Ideal gyro and accelerometer outputs for a truth trajectory.

    ``omega_ib = omega_nb + omega_ie_b + b_g`` and ``f = -g_b + b_a``: at rest the
    accelerometer senses the reaction to gravity.
    """
    gyro = truth.omega_nb_b + truth.omega_ie_b + np.asarray(true_bg, dtype=float)
    accel = -truth.g_b + np.asarray(true_ba, dtype=float)
    stream = ImuStream(t=truth.t.copy(), gyro=gyro, accel=accel, segment=truth.segment.copy())
    if derivatives:
        d1w, d2w, d1f, d2f = _derivatives(truth.omega_nb_b, truth.d_omega_nb_b, truth.dd_omega_nb_b,
                                          truth.g_b, truth.omega_ie_b)
        stream.d1_gyro, stream.d2_gyro, stream.d1_accel, stream.d2_accel = d1w, d2w, d1f, d2f
    return stream


def analytic_derivatives(truth: TruthSample, record: ImuRecord, check_tol: float = 1e-12) -> ImuRecord:
    """Fill the derivative fields of `record` from the truth sample it was emitted from.

    For constant-rate rotation the identities ``d1_omega x w = d2_omega`` and
    ``d1_f x w = d2_f`` are checked to `check_tol` (relative).
    """
    w = truth.omega_nb_b
    if not truth.rotating:
        raise OutsideRotation(f"sample at t={truth.t} is not inside a rotation segment")
    d1w, d2w, d1f, d2f = _derivatives(w, truth.d_omega_nb_b, truth.dd_omega_nb_b, truth.g_b, truth.omega_ie_b)
    if not np.any(truth.d_omega_nb_b):
        for d1, d2 in ((d1w, d2w), (d1f, d2f)):
            scale = max(np.linalg.norm(d2), np.linalg.norm(d1) * np.linalg.norm(w), 1e-300)
            if np.linalg.norm(np.cross(d1, w) - d2) > check_tol * scale:
                raise SimulationError("derivative self-check failed")
    return replace(record, d1_omega=d1w, d2_omega=d2w, d1_f=d1f, d2_f=d2f)


def _central_weights(halfwidth: int, order: int) -> np.ndarray:
    offsets = np.arange(-halfwidth, halfwidth + 1, dtype=float)
    vander = np.vander(offsets, increasing=True).T
    rhs = np.zeros(len(offsets))
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(vander, rhs)


def finite_diff_derivatives(stream: ImuStream, stencil_halfwidth: int = 2) -> ImuStream:
    """Central finite-difference derivatives, applied separately inside each segment.

    The stencil never straddles a segment boundary; the first and last
    `stencil_halfwidth` samples of every segment get NaN derivatives.

    Raises
    ------
    SegmentTooShort
        If a segment has fewer samples than the stencil.
    """
    h = int(stencil_halfwidth)
    if h < 1:
        raise ValueError("stencil half-width must be at least 1")
    dt = stream.dt
    w1 = _central_weights(h, 1) / dt
    w2 = _central_weights(h, 2) / dt**2
    out = stream.copy()
    arrays = {name: np.full_like(stream.gyro, np.nan) for name in _DERIV_FIELDS}
    for a, b in segment_runs(stream.segment):
        if b - a < 2 * h + 1:
            raise SegmentTooShort(f"segment of {b - a} samples is shorter than the {2 * h + 1}-point stencil")
        for src, n1, n2 in ((stream.gyro, "d1_gyro", "d2_gyro"), (stream.accel, "d1_accel", "d2_accel")):
            x = src[a:b]
            m = b - a - 2 * h
            d1 = np.zeros((m, 3))
            d2 = np.zeros((m, 3))
            for j in range(2 * h + 1):
                d1 += w1[j] * x[j:j + m]
                d2 += w2[j] * x[j:j + m]
            arrays[n1][a + h:b - h] = d1
            arrays[n2][a + h:b - h] = d2
    for name, arr in arrays.items():
        setattr(out, name, arr)
    return out


def add_noise(stream: ImuStream, sigma_g: float, sigma_a: float, seed: int) -> ImuStream:
    """White Gaussian noise with densities `sigma_g` [rad/s/sqrt(Hz)] and `sigma_a` [m/s^2/sqrt(Hz)].

    Per-sample standard deviation is ``sigma * sqrt(sample_rate)``.
    """
    out = stream.copy()
    if sigma_g == 0.0 and sigma_a == 0.0:
        return out
    rng = np.random.default_rng(seed)
    root_rate = np.sqrt(1.0 / stream.dt)
    out.gyro = out.gyro + sigma_g * root_rate * rng.standard_normal(out.gyro.shape)
    out.accel = out.accel + sigma_a * root_rate * rng.standard_normal(out.accel.shape)
    return out


def simulate(s: Scenario, derivatives: str = "analytic", stencil_halfwidth: int = 2,
             sigma_g: float = 0.0, sigma_a: float = 0.0, seed: int = 0):
    """Truth plus IMU stream for a scenario.

    `derivatives` is ``"analytic"``, ``"finite_difference"`` or ``"none"``.
    Noise, if any, is added before finite differencing.
    """
    truth = integrate_truth(s)
    stream = emit_imu(truth, s.true_bg, s.true_ba, derivatives=(derivatives == "analytic"))
    stream = add_noise(stream, sigma_g, sigma_a, seed)
    if derivatives == "finite_difference":
        stream = finite_diff_derivatives(stream, stencil_halfwidth)
    elif derivatives not in ("analytic", "none"):
        raise ValueError(f"unknown derivative mode {derivatives!r}")
    return truth, stream


IMU_COLUMNS = ["t", "wx", "wy", "wz", "fx", "fy", "fz"]
DERIV_COLUMNS = [
    "dwx", "dwy", "dwz", "d2wx", "d2wy", "d2wz",
    "dfx", "dfy", "dfz", "d2fx", "d2fy", "d2fz",
]


def write_imu_csv(stream: ImuStream, path) -> None:
    """Dump a stream; derivative columns are written when present, `segment` last."""
    cols = [stream.t[:, None], stream.gyro, stream.accel]
    header = list(IMU_COLUMNS)
    if stream.has_derivatives:
        cols += [stream.d1_gyro, stream.d2_gyro, stream.d1_accel, stream.d2_accel]
        header += DERIV_COLUMNS
    data = np.hstack(cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header + ["segment"])
        for row, seg in zip(data, stream.segment):
            w.writerow([repr(float(x)) for x in row] + [int(seg)])


def read_imu_csv(path) -> ImuStream:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(x) for x in r] for r in body]) if body else np.zeros((0, len(header)))
    col = {name: i for i, name in enumerate(header)}
    pick = lambda names: data[:, [col[n] for n in names]]
    seg = data[:, col["segment"]].astype(int) if "segment" in col else np.zeros(len(data), dtype=int)
    stream = ImuStream(t=data[:, col["t"]], gyro=pick(IMU_COLUMNS[1:4]), accel=pick(IMU_COLUMNS[4:7]), segment=seg)
    if "dwx" in col:
        stream.d1_gyro = pick(DERIV_COLUMNS[0:3])
        stream.d2_gyro = pick(DERIV_COLUMNS[3:6])
        stream.d1_accel = pick(DERIV_COLUMNS[6:9])
        stream.d2_accel = pick(DERIV_COLUMNS[9:12])
    return stream


@dataclass
class VelocityReference:
    """Reference ground velocity (N, U, E) with optional analytic derivatives."""

    t: np.ndarray
    v: np.ndarray
    dv: Optional[np.ndarray] = None
    d2v: Optional[np.ndarray] = None


def vertical_shaker(earth: EarthParams, C_bn, t0: float, duration: float, sample_rate: float,
                    amplitude: float, angular_frequency: float, true_bg, true_ba, segment: int = 0):
    """Desk-scale translation stub: body held at a fixed attitude while the site
    oscillates vertically with velocity ``v_U = amplitude * sin(w (t - t0))``.

    Returns the IMU stream (with analytic derivatives) and the velocity reference.
    Vertical motion leaves the transport rate at zero.
    """
    n = int(round(duration * sample_rate))
    t = t0 + np.arange(n) / sample_rate
    tau = t - t0
    w = angular_frequency
    up = np.array([0.0, 1.0, 0.0])
    v = (amplitude * np.sin(w * tau))[:, None] * up
    dv = (amplitude * w * np.cos(w * tau))[:, None] * up
    d2v = (-amplitude * w * w * np.sin(w * tau))[:, None] * up
    d3v = (-amplitude * w**3 * np.cos(w * tau))[:, None] * up
    wie = earth.omega_ie_n
    s_n = dv + 2.0 * np.cross(wie, v) - earth.gravity_n
    ds_n = d2v + 2.0 * np.cross(wie, dv)
    dds_n = d3v + 2.0 * np.cross(wie, d2v)
    c_nb = np.asarray(C_bn).T
    gyro = np.tile(c_nb @ wie + np.asarray(true_bg, dtype=float), (n, 1))
    stream = ImuStream(
        t=t,
        gyro=gyro,
        accel=s_n @ c_nb.T + np.asarray(true_ba, dtype=float),
        segment=np.full(n, segment, dtype=int),
        d1_gyro=np.zeros((n, 3)),
        d2_gyro=np.zeros((n, 3)),
        d1_accel=ds_n @ c_nb.T,
        d2_accel=dds_n @ c_nb.T,
    )
    return stream, VelocityReference(t=t, v=v, dv=dv, d2v=d2v)
