"""Coarse alignment and a 12-state error-state Kalman filter with zero-velocity updates.

Error state ``x = [phi, dv, dbg, dba]`` with every error defined as estimate
minus truth and the attitude error by ``C_hat = (I - skew(phi)) C``. The
linear error model is::

    phi' = -w_in x phi + C_hat dbg
    dv'  = (f^n x) phi - (2 w_ie + w_en) x dv - C_hat dba
    dbg' = 0,  dba' = 0

Everything is vectorised over a leading batch axis so that independent
Monte Carlo runs share one pass over the IMU stream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .earth import DEG, DEG_PER_HOUR, MICRO_G, EarthParams, transport_rate_n
from .lemmas import lemma1_attitude
from .scenario import ImuStream
from .so3 import dcm_to_euler, project_to_so3, skew, so3_exp

NX = 12
PHI, DV, DBG, DBA = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12)


@dataclass
class NavState:
    """Nominal navigation state; arrays may carry a leading batch axis."""

    C_bn: np.ndarray
    v_n: np.ndarray
    bg_hat: np.ndarray
    ba_hat: np.ndarray

    def copy(self) -> "NavState":
        return NavState(self.C_bn.copy(), self.v_n.copy(), self.bg_hat.copy(), self.ba_hat.copy())

    def take(self, i) -> "NavState":
        return NavState(self.C_bn[i], self.v_n[i], self.bg_hat[i], self.ba_hat[i])


@dataclass
class ErrorState12:
    x: np.ndarray  # (..., 12)
    P: np.ndarray  # (..., 12, 12)

    @property
    def phi(self):
        return self.x[..., PHI]

    @property
    def dv(self):
        return self.x[..., DV]

    @property
    def dbg(self):
        return self.x[..., DBG]

    @property
    def dba(self):
        return self.x[..., DBA]


@dataclass
class EkfSettings:
    """Filter tuning. Angles in rad, rates in rad/s, accelerations in m/s^2.

    `q` holds per-second process noise densities for the 12 states; the
    per-step increment is ``q * dt``.
    """

    coarse_duration: float = 20.0
    init_attitude_sigma: float = 1.0 * DEG
    p0_attitude_sigma: Optional[float] = None  # defaults to init_attitude_sigma
    p0_velocity_sigma: float = 0.1
    p0_gyro_sigma: float = 10.0 * DEG_PER_HOUR
    p0_accel_sigma: float = 100.0 * MICRO_G
    q: tuple = (1e-16,) * 12
    r_sigma: float = 1e-4
    measurement_rate: float = 1.0
    initial_bg: tuple = (0.0, 0.0, 0.0)
    initial_ba: tuple = (0.0, 0.0, 0.0)
    feedback: str = "closed_loop"

    def __post_init__(self):
        if self.feedback != "closed_loop":
            raise ValueError("only closed-loop feedback is supported")
        sig = [self.init_attitude_sigma, self.p0_velocity_sigma, self.p0_gyro_sigma, self.p0_accel_sigma, self.r_sigma]
        if self.p0_attitude_sigma is not None:
            sig.append(self.p0_attitude_sigma)
        if min(sig) < 0 or min(self.q) < 0:
            raise ValueError("variances must be non-negative")
        if len(self.q) != NX:
            raise ValueError("q must have 12 entries")
        if self.coarse_duration <= 0 or self.measurement_rate <= 0:
            raise ValueError("coarse duration and measurement rate must be positive")

    @property
    def p0_diag(self) -> np.ndarray:
        att = self.init_attitude_sigma if self.p0_attitude_sigma is None else self.p0_attitude_sigma
        s = np.repeat([att, self.p0_velocity_sigma, self.p0_gyro_sigma, self.p0_accel_sigma], 3)
        return s**2

    @property
    def r_diag(self) -> np.ndarray:
        return np.full(3, self.r_sigma**2)


def random_rotation_perturbation(sigma: float, seed: int) -> np.ndarray:
    """``so3_exp`` of a Gaussian rotation vector with per-axis std `sigma`."""
    rng = np.random.default_rng(seed)
    return so3_exp(sigma * rng.standard_normal(3))


def coarse_align(static_avg_omega, static_avg_f, earth: EarthParams, perturb_sigma: float = 0.0,
                 seed: int = 0) -> np.ndarray:
    """Analytic gyrocompass alignment from static averages, then a seeded perturbation.

    Gravity is paired with the negated specific force and Earth rate with the
    gyro average. The pairs enter :func:`lemma1_attitude` as orthonormal triads
    (gravity, gravity x rate, and their cross product), so tilt follows from
    gravity alone and the Earth rate only fixes heading. The result is
    ``so3_exp(e) @ C`` with ``e ~ N(0, perturb_sigma^2 I)``.

    Raises
    ------
    DegenerateDirections
        Near the poles, where gravity and Earth rate are parallel.
    """
    g_b = -np.asarray(static_avg_f, dtype=float)
    w_b = np.asarray(static_avg_omega, dtype=float)
    c = lemma1_attitude(list(zip(_triad(g_b, w_b), _triad(earth.gravity_n, earth.omega_ie_n))))
    if perturb_sigma > 0:
        c = random_rotation_perturbation(perturb_sigma, seed) @ c
    return c


def _triad(a, b):
    """Orthonormal frame from a primary and a secondary direction."""
    from .errors import DegenerateDirections

    u1 = a / np.linalg.norm(a)
    u2 = np.cross(a, b)
    n2 = np.linalg.norm(u2)
    if n2 <= 1e-6 * np.linalg.norm(a) * np.linalg.norm(b):
        raise DegenerateDirections("gravity and Earth rate are parallel")
    u2 = u2 / n2
    return [u1, u2, np.cross(u1, u2)]


def _batch(x, b: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.broadcast_to(x, (b,) + x.shape[-1:] if x.ndim == 1 else x.shape).copy()


def _rates(state: NavState, earth: EarthParams):
    w_ie = earth.omega_ie_n
    w_en = transport_rate_n(earth, state.v_n)
    return w_ie + w_en, 2.0 * w_ie + w_en


def _nav_rate(c_bn, gyro, bg_hat, w_in):
    return gyro - bg_hat - np.einsum("bji,bj->bi", c_bn, w_in)


def error_dynamics(state: NavState, f_b, earth: EarthParams) -> np.ndarray:
    """Continuous-time error-state matrix ``F`` (batch, 12, 12)."""
    c = state.C_bn
    b = c.shape[0]
    w_in, w_cor = _rates(state, earth)
    f_n = np.einsum("bij,bj->bi", c, np.asarray(f_b) - state.ba_hat)
    F = np.zeros((b, NX, NX))
    F[:, PHI, PHI] = -skew(w_in)
    F[:, PHI, DBG] = c
    F[:, DV, PHI] = skew(f_n)
    F[:, DV, DV] = -skew(w_cor)
    F[:, DV, DBA] = -c
    return F


def _accel_n(state: NavState, c_bn, f_b, earth: EarthParams):
    _, w_cor = _rates(state, earth)
    return np.einsum("bij,bj->bi", c_bn, f_b - state.ba_hat) + earth.gravity_n - np.cross(w_cor, state.v_n)


def ekf_propagate(state: NavState, err: ErrorState12, gyro, accel, dt: float, earth: EarthParams,
                  q=None, next_gyro=None, next_accel=None):
    """Advance nominal state and covariance over one IMU interval.

    With the next sample given, attitude uses Heun's method on the
    navigation-relative rate and velocity the trapezoid rule; without it the
    current sample is held (used across segment boundaries). Returns new
    ``(state, err)``; inputs are not modified.
    """
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    w_in, _ = _rates(state, earth)
    w0 = _nav_rate(state.C_bn, gyro, state.bg_hat, w_in)
    a0 = _accel_n(state, state.C_bn, accel, earth)
    if next_gyro is None:
        c1 = state.C_bn @ so3_exp(dt * w0)
        v1 = state.v_n + dt * a0
    else:
        c_pred = state.C_bn @ so3_exp(dt * w0)
        w1 = _nav_rate(c_pred, np.asarray(next_gyro, dtype=float), state.bg_hat, w_in)
        c1 = state.C_bn @ so3_exp(0.5 * dt * (w0 + w1))
        a1 = _accel_n(state, c1, np.asarray(next_accel, dtype=float), earth)
        v1 = state.v_n + 0.5 * dt * (a0 + a1)

    F = error_dynamics(state, accel, earth)
    phi = np.eye(NX) + F * dt
    P = phi @ err.P @ np.swapaxes(phi, 1, 2)
    if q is not None:
        P = P + np.asarray(q) * dt * np.eye(NX)
    x = np.einsum("bij,bj->bi", phi, err.x)
    return NavState(c1, v1, state.bg_hat.copy(), state.ba_hat.copy()), ErrorState12(x, P)


def ekf_update_zupt(state: NavState, err: ErrorState12, r_diag):
    """Zero-velocity update with closed-loop feedback and Joseph-form covariance.

    The measurement is the velocity estimate itself (truth is zero). After the
    update the estimated errors are folded into the nominal state and the
    error mean is reset. Returns ``(state, err, innovation)``.
    """
    P = err.P
    b = P.shape[0]
    H = np.zeros((3, NX))
    H[:, DV] = np.eye(3)
    R = np.diag(np.asarray(r_diag, dtype=float))
    z = state.v_n
    innov = z - err.x[:, DV]
    S = P[:, DV, DV] + R
    K = np.swapaxes(np.linalg.solve(S, P[:, DV, :]), 1, 2)  # P H^T S^-1, S symmetric
    x = err.x + np.einsum("bij,bj->bi", K, innov)
    ikh = np.eye(NX) - K @ H
    P = ikh @ P @ np.swapaxes(ikh, 1, 2) + K @ R @ np.swapaxes(K, 1, 2)
    P = 0.5 * (P + np.swapaxes(P, 1, 2))

    c = project_to_so3(so3_exp(x[:, PHI]) @ state.C_bn)
    new = NavState(c, state.v_n - x[:, DV], state.bg_hat - x[:, DBG], state.ba_hat - x[:, DBA])
    return new, ErrorState12(np.zeros((b, NX)), P), innov


@dataclass
class EkfHistory:
    """Filter history sampled at measurement epochs; leading axis is the batch."""

    t: np.ndarray  # (M,)
    C_bn: np.ndarray  # (B, M, 3, 3)
    v_n: np.ndarray  # (B, M, 3)
    bg_hat: np.ndarray
    ba_hat: np.ndarray
    P_diag: np.ndarray  # (B, M, 12)
    innovation: np.ndarray  # (B, M, 3)

    def run(self, i: int = 0) -> "EkfHistory":
        """History of a single batch member, keeping a batch axis of one."""
        sl = slice(i, i + 1)
        return EkfHistory(self.t, self.C_bn[sl], self.v_n[sl], self.bg_hat[sl], self.ba_hat[sl],
                          self.P_diag[sl], self.innovation[sl])


@dataclass
class EkfResult:
    final: NavState  # batched
    P: np.ndarray  # (B, 12, 12)
    initial_C_bn: np.ndarray  # (B, 3, 3) attitude the fine phase started from
    start_time: float
    history: Optional[EkfHistory] = None
    max_innovation: np.ndarray = field(default_factory=lambda: np.zeros(0))  # (B,) over all epochs
    static_avg: tuple = ()  # (omega, f) averaged over the coarse window


def static_average(stream: ImuStream, duration: float):
    """Mean gyro and accelerometer output over ``[t0, t0 + duration)``."""
    w = stream.window(stream.t[0], stream.t[0] + duration)
    if len(w) == 0:
        raise ValueError("coarse-alignment window holds no samples")
    return w.gyro.mean(axis=0), w.accel.mean(axis=0)


def ekf_run(stream: ImuStream, settings: EkfSettings, earth: EarthParams, seeds: Sequence[int] = (0,),
            initial: Optional[NavState] = None, record_history: bool = True,
            engine: str = "compiled") -> EkfResult:
    """Coarse alignment followed by fine alignment, one batch member per seed.

    The coarse window must be static. When `initial` is given the coarse
    phase is skipped and the filter starts from that state at the first sample.
    `engine` selects the compiled loop or the step-by-step numpy reference.
    """
    seeds = list(seeds)
    b = len(seeds)
    dt = stream.dt
    if initial is None:
        k0 = int(round(settings.coarse_duration / dt))
        if k0 >= len(stream):
            raise ValueError("stream is shorter than the coarse-alignment phase")
        w_avg, f_avg = static_average(stream, settings.coarse_duration)
        bg0 = np.asarray(settings.initial_bg, dtype=float)
        ba0 = np.asarray(settings.initial_ba, dtype=float)
        c0 = np.stack([coarse_align(w_avg - bg0, f_avg - ba0, earth, settings.init_attitude_sigma, s) for s in seeds])
        state = NavState(c0, np.zeros((b, 3)), _batch(bg0, b), _batch(ba0, b))
        static_avg = (w_avg, f_avg)
    else:
        k0 = 0
        state = NavState(_batch_matrix(initial.C_bn, b), _batch(initial.v_n, b), _batch(initial.bg_hat, b),
                         _batch(initial.ba_hat, b))
        static_avg = ()
    initial_c = state.C_bn.copy()
    err = ErrorState12(np.zeros((b, NX)), np.broadcast_to(np.diag(settings.p0_diag), (b, NX, NX)).copy())
    q = np.asarray(settings.q, dtype=float)
    r = settings.r_diag
    every = max(1, int(round(1.0 / (settings.measurement_rate * dt))))

    n = len(stream)
    n_epochs = (n - 1 - k0) // every
    hist_t = stream.t[k0 + every * np.arange(n_epochs + 1)]
    shape = (b, n_epochs + 1) if record_history else (b, 1)
    hc = np.zeros(shape + (3, 3))
    hv, hbg, hba, hin = (np.zeros(shape + (3,)) for _ in range(4))
    hp = np.zeros(shape + (NX,))
    max_innov = np.zeros(b)

    if engine == "compiled":
        from ._kernel import run_batch

        r_e, r_n = earth.radii
        run_batch(np.ascontiguousarray(stream.gyro), np.ascontiguousarray(stream.accel),
                  np.ascontiguousarray(stream.segment), dt, k0, every, n_epochs,
                  state.C_bn, state.v_n, state.bg_hat, state.ba_hat, err.P, q, r,
                  earth.omega_ie_n, earth.gravity_n, np.tan(earth.lat), r_e + earth.h, r_n + earth.h,
                  record_history, hc, hv, hbg, hba, hp, hin, max_innov)
    elif engine == "numpy":
        seg = stream.segment

        def record(j, innov):
            if record_history:
                hc[:, j], hv[:, j], hbg[:, j], hba[:, j] = state.C_bn, state.v_n, state.bg_hat, state.ba_hat
                hp[:, j] = np.diagonal(err.P, axis1=1, axis2=2)
                hin[:, j] = innov

        record(0, np.zeros((b, 3)))
        for j in range(1, n_epochs + 1):
            for k in range(k0 + (j - 1) * every, k0 + j * every):
                if seg[k] == seg[k + 1]:
                    state, err = ekf_propagate(state, err, stream.gyro[k], stream.accel[k], dt, earth, q,
                                               stream.gyro[k + 1], stream.accel[k + 1])
                else:
                    state, err = ekf_propagate(state, err, stream.gyro[k], stream.accel[k], dt, earth, q)
            state, err, innov = ekf_update_zupt(state, err, r)
            max_innov = np.maximum(max_innov, np.linalg.norm(innov, axis=1))
            record(j, innov)
    else:
        raise ValueError(f"unknown engine {engine!r}")

    history = EkfHistory(hist_t, hc, hv, hbg, hba, hp, hin) if record_history else None
    return EkfResult(final=state, P=err.P, initial_C_bn=initial_c, start_time=float(stream.t[k0]),
                     history=history, max_innovation=max_innov, static_avg=static_avg)


def _batch_matrix(m, b: int) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.broadcast_to(m, (b, 3, 3)).copy() if m.ndim == 2 else m.copy()


HISTORY_COLUMNS = (
    ["t", "roll_deg", "yaw_deg", "pitch_deg", "v_N", "v_U", "v_E"]
    + ["bgx_deg_h", "bgy_deg_h", "bgz_deg_h"]
    + ["bax", "bay", "baz", "bax_ug", "bay_ug", "baz_ug"]
    + [f"P{i}" for i in range(NX)]
)


def history_rows(h: EkfHistory, i: int = 0) -> np.ndarray:
    roll, yaw, pitch = dcm_to_euler(h.C_bn[i])
    return np.column_stack([
        h.t, np.degrees(roll), np.degrees(yaw), np.degrees(pitch), h.v_n[i],
        h.bg_hat[i] / DEG_PER_HOUR, h.ba_hat[i], h.ba_hat[i] / MICRO_G, h.P_diag[i],
    ])


def write_history_csv(h: EkfHistory, path, i: int = 0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history_rows(h, i):
            w.writerow([repr(float(x)) for x in row])
