"""Constructive solvers for biases and initial attitude.

All functions are pure. Streams carry analytic or finite-difference
derivatives; samples without derivatives are skipped where derivatives are
needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .earth import DEG_PER_HOUR, MICRO_G, EarthParams, transport_rate_n
from .errors import (
    CoplanarPositions,
    DependentAxes,
    IllConditionedGram,
    InconsistentSegment,
    NoFeasiblePair,
    ParallelFdot,
    SingularGram,
    VanishingFdot,
)
from .lemmas import EPS_DIR, EPS_RANK, _max_pairwise_sine, lemma1_attitude, lemma2_point_from_spheres, lemma4_batch
from .scenario import ImuRecord, ImuStream, VelocityReference
from .so3 import project_to_so3, skew, so3_exp

COLLAPSE_TOL = 1e-6
CONSISTENCY_TOL = 1e-6
FEASIBLE_TOL = 1e-6
NCR_COND_MAX = 1e10
LSQ_COND_MAX = 1e12
AXIS_TOL = 1e-6
EPS_FDOT = 1e-8  # m/s^3


def static_constraint_residuals(rec: ImuRecord, bg, ba, earth: EarthParams):
    """Residuals of the three static constraints for a bias pair.

    Returns
    -------
    r9, r10, r11 : float
        ``|w - bg| - Omega``, ``|f - ba| - g`` and
        ``(w - bg).(f - ba) - g Omega sin L``.
    """
    w = np.asarray(rec.omega_ib_b) - np.asarray(bg)
    f = np.asarray(rec.f_b) - np.asarray(ba)
    return (
        float(np.linalg.norm(w) - earth.omega),
        float(np.linalg.norm(f) - earth.g),
        float(w @ f - earth.g_omega_sin_lat),
    )


def relative_static_residuals(rec: ImuRecord, bg, ba, earth: EarthParams):
    """Static residuals scaled by Omega, g and g*Omega respectively."""
    r9, r10, r11 = static_constraint_residuals(rec, bg, ba, earth)
    return r9 / earth.omega, r10 / earth.g, r11 / (earth.g * earth.omega)


def _attitude_from_vectors(omega_avg, f_avg, bg, ba, earth: EarthParams):
    g_b = np.asarray(ba) - np.asarray(f_avg)
    w_ie_b = np.asarray(omega_avg) - np.asarray(bg)
    g_n = earth.gravity_n
    w_n = earth.omega_ie_n
    pairs = [
        (g_b / np.linalg.norm(g_b), g_n / np.linalg.norm(g_n)),
        (w_ie_b / np.linalg.norm(w_ie_b), w_n / np.linalg.norm(w_n)),
    ]
    cb, cn = np.cross(pairs[0][0], pairs[1][0]), np.cross(pairs[0][1], pairs[1][1])
    pairs.append((cb / np.linalg.norm(cb), cn / np.linalg.norm(cn)))
    return lemma1_attitude(pairs)


@dataclass(frozen=True)
class MultipositionResult:
    bg: np.ndarray
    ba: np.ndarray
    C_bn0: np.ndarray


def multiposition_solve(static_segments, earth: EarthParams, eps_rank: float = EPS_RANK) -> MultipositionResult:
    """Biases from averaged static postures.

    Parameters
    ----------
    static_segments : sequence of (omega_avg, f_avg)
        Averaged gyro and accelerometer outputs of each still posture.

    Notes
    -----
    The gyro bias is the centre of the sphere of radius Omega through the
    gyro averages. The accelerometer bias solves the stacked system of
    sphere-difference rows for ``f`` and the dot-product rows
    ``(w_k - bg).ba = (w_k - bg).f_k - g Omega sin L``. The attitude returned
    is that of the first posture.

    Raises
    ------
    CoplanarPositions
        If the gyro averages do not span three dimensions.
    """
    w = np.array([s[0] for s in static_segments], dtype=float)
    f = np.array([s[1] for s in static_segments], dtype=float)
    if len(w) < 4:
        raise CoplanarPositions(f"{len(w)} postures cannot determine the bias; at least four are needed")
    sol = lemma2_point_from_spheres(w, earth.omega, eps_rank=eps_rank)
    if not sol.unique:
        raise CoplanarPositions(f"posture gyro outputs have rank {sol.rank} < 3")
    bg = sol.point

    wc = w - bg
    rows = [2.0 * (f[1:] - f[0]), wc]
    rhs = [np.sum(f[1:] ** 2, axis=1) - np.sum(f[0] ** 2), np.einsum("ij,ij->i", wc, f) - earth.g_omega_sin_lat]
    a = np.vstack(rows)
    b = np.concatenate(rhs)
    norms = np.linalg.norm(a, axis=1)
    keep = norms > 0
    a, b = a[keep] / norms[keep, None], b[keep] / norms[keep]
    ba, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    if rank < 3 or sv[-1] < eps_rank * sv[0]:
        raise CoplanarPositions("accelerometer system is rank deficient")
    return MultipositionResult(bg=bg, ba=ba, C_bn0=_attitude_from_vectors(w[0], f[0], bg, ba, earth))


def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    if n > 1:
        w[0] = w[-1] = 0.5
    return w


def _pairwise_sum(x, wts=None) -> np.ndarray:
    """Sum over the leading axis with numpy's pairwise summation."""
    x = np.asarray(x, dtype=float)
    if wts is not None:
        x = x * wts.reshape((-1,) + (1,) * (x.ndim - 1))
    flat = np.ascontiguousarray(x.reshape(len(x), -1).T)
    return flat.sum(axis=1).reshape(x.shape[1:])


def _with_derivatives(stream: ImuStream) -> ImuStream:
    if not stream.has_derivatives:
        raise ValueError("stream carries no derivatives")
    return stream.take(stream.derivative_mask)


def io_ncr_omega(stream: ImuStream, cond_max: float = NCR_COND_MAX) -> np.ndarray:
    """Constant body rate relative to the navigation frame.

    Solves ``sum[(w' x)^2 + (f' x)^2] omega = sum[w' x w'' + f' x f'']``
    with trapezoidal weights over the samples that carry derivatives.

    Raises
    ------
    SingularGram
        If the Gram matrix condition number exceeds `cond_max`, e.g. a static
        stream or rotation with the axis, Earth rate and gravity all parallel.
    """
    s = _with_derivatives(stream)
    if len(s) == 0:
        raise SingularGram("no samples with derivatives")
    wts = _trapezoid_weights(len(s))
    kw, kf = skew(s.d1_gyro), skew(s.d1_accel)
    gram = _pairwise_sum(kw @ kw + kf @ kf, wts)
    rhs = _pairwise_sum(np.cross(s.d1_gyro, s.d2_gyro) + np.cross(s.d1_accel, s.d2_accel), wts)
    if not np.any(gram) or np.linalg.cond(gram) > cond_max:
        raise SingularGram("rotation-rate Gram matrix is singular")
    return np.linalg.solve(gram, rhs)


@dataclass(frozen=True)
class RateHistory:
    """Per-sample body rate estimate along a fixed axis."""

    t: np.ndarray
    omega: np.ndarray  # (M, 3)
    axis: np.ndarray  # unit vector; rates are omega @ axis

    @property
    def rate(self) -> np.ndarray:
        return self.omega @ self.axis


def io_nfvr_omega(stream: ImuStream, eps_fdot: float = EPS_FDOT, axis_tol: float = AXIS_TOL) -> RateHistory:
    """Per-sample body rate for a fixed-axis, varying-rate rotation.

    ``omega(t) = (f'' x f') / |f'|^2``; the rate magnitude ``k(t)`` is only an
    intermediate and is not kept.

    Raises
    ------
    VanishingFdot
        If ``|f'| <= eps_fdot`` at any sample; this is always the case when the
        rotation axis is vertical.
    InconsistentSegment
        If the recovered directions disagree by more than `axis_tol` radians.
    """
    s = _with_derivatives(stream)
    if len(s) == 0:
        raise VanishingFdot("no samples with derivatives")
    fd = s.d1_accel
    n2 = np.einsum("ij,ij->i", fd, fd)
    if np.any(np.sqrt(n2) <= eps_fdot):
        raise VanishingFdot("specific-force derivative vanishes")
    omega = np.cross(s.d2_accel, fd) / n2[:, None]
    # principal direction handles sign changes of the rate
    _, _, vt = np.linalg.svd(omega, full_matrices=False)
    axis = vt[0]
    norms = np.linalg.norm(omega, axis=1)
    ok = norms > 0
    sines = np.linalg.norm(np.cross(omega[ok], axis), axis=1) / norms[ok]
    if sines.size and sines.max() > axis_tol:
        raise InconsistentSegment(f"rotation axis wanders by {sines.max():.3e} rad")
    if np.sum(omega @ axis) < 0:
        axis = -axis
    return RateHistory(t=s.t, omega=omega, axis=axis)


def _omega_rows(omega_nb, n: int) -> np.ndarray:
    w = np.asarray(omega_nb, dtype=float)
    return np.broadcast_to(w, (n, 3)) if w.ndim == 1 else w


def _accel_candidates_rows(w, f, fd, g, collapse_tol):
    m_plus, m_minus, ratio = lemma4_batch(w, -fd, g)
    ba_plus, ba_minus = f - m_minus, f - m_plus
    return ba_plus, ba_minus, ratio < collapse_tol


def _gyro_candidates_rows(w, gyro, gyro_d1, omega_, collapse_tol):
    u = w / np.linalg.norm(w, axis=1)[:, None]
    # omega_nb' is along the axis, so only the perpendicular part of the gyro derivative counts
    perp = gyro_d1 - np.einsum("ij,ij->i", gyro_d1, u)[:, None] * u
    m_plus, m_minus, ratio = lemma4_batch(w, -perp, omega_)
    base = gyro - w
    return base - m_minus, base - m_plus, ratio < collapse_tol


def accel_bias_candidates(omega_nb, rec: ImuRecord, g: float, collapse_tol: float = COLLAPSE_TOL):
    """Both accelerometer-bias solutions of ``omega x (f - ba) = -f'`` with ``|f - ba| = g``.

    Returns
    -------
    ba_plus, ba_minus : ndarray
        ``ba_plus`` takes the ``+`` branch of the square root along the axis.
    collapsed : bool
        True when the axis is perpendicular to gravity to within `collapse_tol`;
        both outputs are then the same vector.
    """
    p, m, c = _accel_candidates_rows(
        np.atleast_2d(omega_nb), np.atleast_2d(rec.f_b), np.atleast_2d(rec.d1_f), g, collapse_tol
    )
    if c[0]:
        p = m = 0.5 * (p + m)
    return p[0], m[0].copy(), bool(c[0])


def gyro_bias_candidates(omega_nb, rec: ImuRecord, Omega: float, collapse_tol: float = COLLAPSE_TOL):
    """Both gyro-bias solutions of ``omega x (w - omega - bg) = -w'_perp`` with ``|w - omega - bg| = Omega``."""
    p, m, c = _gyro_candidates_rows(
        np.atleast_2d(omega_nb), np.atleast_2d(rec.omega_ib_b), np.atleast_2d(rec.d1_omega), Omega, collapse_tol
    )
    if c[0]:
        p = m = 0.5 * (p + m)
    return p[0], m[0].copy(), bool(c[0])


@dataclass
class BiasCandidateSet:
    ba_plus: np.ndarray
    ba_minus: np.ndarray
    bg_plus: np.ndarray
    bg_minus: np.ndarray
    collapsed_a: bool
    collapsed_g: bool
    feasible_pairs: list = field(default_factory=list)
    spread_a: float = 0.0  # max per-sample deviation from the average [m/s^2]
    spread_g: float = 0.0  # [rad/s]

    @property
    def separation_a(self) -> float:
        return float(np.linalg.norm(self.ba_plus - self.ba_minus))

    @property
    def separation_g(self) -> float:
        return float(np.linalg.norm(self.bg_plus - self.bg_minus))

    def pairs(self) -> list:
        """All distinct (ba, bg) combinations."""
        ba = [self.ba_plus] if self.collapsed_a else [self.ba_plus, self.ba_minus]
        bg = [self.bg_plus] if self.collapsed_g else [self.bg_plus, self.bg_minus]
        return [(a, g) for a in ba for g in bg]


def _average_checked(rows: np.ndarray, scale: float, tol: float, what: str):
    avg = _pairwise_sum(rows) / len(rows)
    spread = float(np.max(np.linalg.norm(rows - avg, axis=1)))
    if spread > tol * scale:
        raise InconsistentSegment(f"{what} candidates vary by {spread / scale:.3e} (relative) across the segment")
    return avg, spread


def segment_bias_candidates(
    omega_nb,
    stream: ImuStream,
    earth: EarthParams,
    collapse_tol: float = COLLAPSE_TOL,
    consistency_tol: float = CONSISTENCY_TOL,
    feasible_tol: float = FEASIBLE_TOL,
) -> BiasCandidateSet:
    """Candidates evaluated at every sample of a rotation segment and averaged.

    `omega_nb` is a constant vector or one row per sample carrying derivatives.

    Raises
    ------
    InconsistentSegment
        If per-sample candidates deviate from their mean by more than
        `consistency_tol` relative to g (accelerometer) or Omega (gyro).
    """
    s = _with_derivatives(stream)
    if len(s) == 0:
        raise InconsistentSegment("no samples with derivatives")
    w = _omega_rows(omega_nb, len(s))
    ap, am, ca = _accel_candidates_rows(w, s.accel, s.d1_accel, earth.g, collapse_tol)
    gp, gm, cg = _gyro_candidates_rows(w, s.gyro, s.d1_gyro, earth.omega, collapse_tol)
    collapsed_a = bool(np.mean(ca) > 0.5)
    collapsed_g = bool(np.mean(cg) > 0.5)
    if collapsed_a:
        ap = am = 0.5 * (ap + am)
    if collapsed_g:
        gp = gm = 0.5 * (gp + gm)
    ba_plus, sa1 = _average_checked(ap, earth.g, consistency_tol, "accelerometer")
    ba_minus, sa2 = _average_checked(am, earth.g, consistency_tol, "accelerometer")
    bg_plus, sg1 = _average_checked(gp, earth.omega, consistency_tol, "gyro")
    bg_minus, sg2 = _average_checked(gm, earth.omega, consistency_tol, "gyro")
    cands = BiasCandidateSet(
        ba_plus=ba_plus, ba_minus=ba_minus, bg_plus=bg_plus, bg_minus=bg_minus,
        collapsed_a=collapsed_a, collapsed_g=collapsed_g,
        spread_a=max(sa1, sa2), spread_g=max(sg1, sg2),
    )
    mid = len(s) // 2
    cands.feasible_pairs = feasible_pairs(cands, w[mid], s.record(mid), earth, tol=feasible_tol)
    return cands


def pair_residual(ba, bg, omega_nb, rec: ImuRecord, earth: EarthParams) -> float:
    """``-w_ie_b . g_b - g Omega sin L`` for the Earth rate and gravity a pair implies."""
    w_ie = np.asarray(rec.omega_ib_b) - np.asarray(bg) - np.asarray(omega_nb)
    g_b = np.asarray(ba) - np.asarray(rec.f_b)
    return float(-w_ie @ g_b - earth.g_omega_sin_lat)


def feasible_pairs(cands: BiasCandidateSet, omega_nb, rec: ImuRecord, earth: EarthParams, tol: float = FEASIBLE_TOL):
    """Keep the candidate pairs consistent with the latitude constraint.

    A pair survives when its residual is below ``tol * g * Omega``.

    Raises
    ------
    NoFeasiblePair
        If no combination survives.
    """
    out = []
    for ba, bg in cands.pairs():
        r = pair_residual(ba, bg, omega_nb, rec, earth)
        if abs(r) < tol * earth.g * earth.omega:
            out.append((np.asarray(ba).copy(), np.asarray(bg).copy()))
    if not out:
        raise NoFeasiblePair("no candidate pair satisfies the latitude constraint")
    return out


def sign_rule_feasible(omega_nb, w_ie_b, g_b) -> bool:
    """True when the same-sign candidate pairs are the feasible ones."""
    return float(np.dot(omega_nb, w_ie_b) * np.dot(omega_nb, g_b)) < 0.0


def body_increments(stream: ImuStream, bg) -> np.ndarray:
    """Rotation vectors of the body between consecutive samples.

    Inside a segment: four-point quadrature of the rate (trapezoid next to
    segment edges) plus the second-order coning term. Across a
    segment boundary the motion is that of the left sample's segment, so the
    left rate is held, with a first-order Taylor term when its derivative is
    available.
    """
    w = stream.gyro - np.asarray(bg, dtype=float)
    dt = np.diff(stream.t)[:, None]
    inc = 0.5 * dt * (w[:-1] + w[1:])
    # four-point rule where both neighbours share the segment
    seg = stream.segment
    if len(w) >= 4:
        same = (seg[:-3] == seg[1:-2]) & (seg[1:-2] == seg[2:-1]) & (seg[2:-1] == seg[3:])
        idx = np.flatnonzero(same) + 1
        inc[idx] = dt[idx] / 24.0 * (13.0 * (w[idx] + w[idx + 1]) - w[idx - 1] - w[idx + 2])
    inc += dt**2 / 12.0 * np.cross(w[:-1], w[1:])
    jump = np.flatnonzero(np.diff(seg) != 0)
    if jump.size:
        hold = dt[jump] * w[jump]
        if stream.d1_gyro is not None:
            d1 = stream.d1_gyro[jump]
            d1 = np.where(np.isfinite(d1), d1, 0.0)
            hold = hold + 0.5 * dt[jump] ** 2 * d1
        inc[jump] = hold
    return inc


def body_attitude_history(stream: ImuStream, bg) -> np.ndarray:
    """``C_{b(t)}^{b(0)}`` at every sample, relative to the first one."""
    steps = so3_exp(body_increments(stream, bg))
    out = np.empty((len(stream), 3, 3))
    r = np.eye(3)
    out[0] = r
    for k, e in enumerate(steps, start=1):
        r = r @ e
        out[k] = r
    return out


def nav_attitude_history(t, earth: EarthParams) -> np.ndarray:
    """``C_{n(t)}^{n(0)}`` for a site fixed on the rotating Earth."""
    t = np.asarray(t, dtype=float)
    return so3_exp((t - t[0])[:, None] * earth.omega_ie_n)


def initial_attitude_lsq(stream: ImuStream, bg, ba, earth: EarthParams, window=None,
                         cond_max: float = LSQ_COND_MAX) -> np.ndarray:
    """Attitude ``C_bn`` at the window start from a bias pair.

    Gravity seen in the frozen initial body frame must equal gravity in the
    frozen initial navigation frame at every instant. Both sides are
    accumulated with trapezoidal weights, the 3x3 gravity Gram matrix is
    inverted, and the result is projected onto SO(3).

    Raises
    ------
    IllConditionedGram
        If the window is too short for the Earth's rotation to open the gravity cone.
    """
    if window is not None:
        t0, t1 = window
        eps = 0.25 * stream.dt
        stream = stream.take((stream.t >= t0 - eps) & (stream.t <= t1 + eps))
    if len(stream) < 2:
        raise IllConditionedGram("window holds fewer than two samples")
    r_b = body_attitude_history(stream, bg)
    r_n = nav_attitude_history(stream.t, earth)
    beta = np.einsum("kij,kj->ki", r_b, np.asarray(ba) - stream.accel)
    gamma = r_n @ earth.gravity_n
    wts = _trapezoid_weights(len(stream))
    gram = _pairwise_sum(gamma[:, :, None] * gamma[:, None, :], wts)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > cond_max:
        raise IllConditionedGram(f"gravity Gram condition number {cond:.3e} exceeds {cond_max:.1e}")
    c_nb = _pairwise_sum(beta[:, :, None] * gamma[:, None, :], wts) @ np.linalg.inv(gram)
    return project_to_so3(c_nb).T


def replay_residual(stream: ImuStream, C_bn0, bg, ba, earth: EarthParams) -> float:
    """Largest ``|C_bn(t)(f - ba) + g^n| / g`` along the stream for an initial state."""
    r_b = body_attitude_history(stream, bg)
    r_n = nav_attitude_history(stream.t, earth)
    c_bn = np.swapaxes(r_n, 1, 2) @ np.asarray(C_bn0) @ r_b
    res = np.einsum("kij,kj->ki", c_bn, stream.accel - np.asarray(ba)) + earth.gravity_n
    return float(np.max(np.linalg.norm(res, axis=1)) / earth.g)


@dataclass(frozen=True)
class MultiAxisResult:
    bg: np.ndarray
    ba: np.ndarray
    C_bn0: np.ndarray


def _segment_axis(omega_nb) -> np.ndarray:
    w = np.atleast_2d(np.asarray(omega_nb, dtype=float))
    _, _, vt = np.linalg.svd(w, full_matrices=False)
    return vt[0]


def multi_axis_solve(segments: Sequence, stream: Optional[ImuStream] = None, earth: Optional[EarthParams] = None,
                     window=None, eps_dir: float = EPS_DIR) -> MultiAxisResult:
    """Unique biases from two or more rotations about independent axes.

    Parameters
    ----------
    segments : sequence of (omega_nb, ImuStream)
        Recovered body rate (constant vector or one row per derivative sample)
        and the samples of that rotation.
    stream, earth, window
        When given, the initial attitude is also solved over `window` of `stream`.

    Raises
    ------
    DependentAxes
        If all rotation axes are parallel.
    """
    if len(segments) < 2:
        raise DependentAxes("at least two rotation segments are required")
    axes = np.array([_segment_axis(w) for w, _ in segments])
    if _max_pairwise_sine(axes) <= np.sin(eps_dir):
        raise DependentAxes("rotation axes are parallel")
    rows, rhs_g, rhs_a = [], [], []
    for omega_nb, seg in segments:
        s = _with_derivatives(seg)
        w = _omega_rows(omega_nb, len(s))
        u = w / np.linalg.norm(w, axis=1)[:, None]
        w_nb_dot = np.einsum("ij,ij->i", s.d1_gyro, u)[:, None] * u
        scale = 1.0 / np.linalg.norm(w, axis=1)[:, None]
        rows.append(skew(w * scale).reshape(-1, 3))
        rhs_g.append(((s.d1_gyro + np.cross(w, s.gyro) - w_nb_dot) * scale).reshape(-1))
        rhs_a.append(((s.d1_accel + np.cross(w, s.accel)) * scale).reshape(-1))
    a = np.vstack(rows)
    sol, _, rank, _ = np.linalg.lstsq(a, np.column_stack([np.concatenate(rhs_g), np.concatenate(rhs_a)]), rcond=None)
    if rank < 3:
        raise DependentAxes("stacked system is rank deficient")
    bg, ba = sol[:, 0], sol[:, 1]
    c0 = None
    if stream is not None and earth is not None:
        c0 = initial_attitude_lsq(stream, bg, ba, earth, window=window)
    return MultiAxisResult(bg=bg, ba=ba, C_bn0=c0)


def specific_force_norm_rate(v_ref: VelocityReference, earth: EarthParams) -> np.ndarray:
    """Time derivative of ``|v' + (2 w_ie + w_en) x v - g^n|^2`` along a velocity reference."""
    t, v = v_ref.t, v_ref.v
    dv = v_ref.dv if v_ref.dv is not None else np.gradient(v, t, axis=0, edge_order=2)
    d2v = v_ref.d2v if v_ref.d2v is not None else np.gradient(dv, t, axis=0, edge_order=2)
    w_ie = earth.omega_ie_n
    w_en = transport_rate_n(earth, v)
    w_en_dot = transport_rate_n(earth, dv)
    s = dv + np.cross(2.0 * w_ie + w_en, v) - earth.gravity_n
    ds = d2v + np.cross(2.0 * w_ie + w_en, dv) + np.cross(w_en_dot, v)
    return 2.0 * np.einsum("ij,ij->i", s, ds)


def accel_aided_resolve(omega_nb, rotation: ImuStream, accelerated: ImuStream, v_ref: VelocityReference,
                        earth: EarthParams, eps_rank: float = EPS_RANK) -> np.ndarray:
    """Unique accelerometer bias from a rotation plus an accelerated interval.

    The rotation gives ``omega x ba = omega x f + f'`` (only the part across
    the axis); the accelerated interval, with a known velocity history, adds
    ``2 f'.ba = 2 f'.f - rho'`` where ``rho = |f - ba|^2``.

    Raises
    ------
    ParallelFdot
        If the accelerated interval adds no information along the rotation
        axis, e.g. zero velocity throughout or ``f'`` parallel to the axis.
    """
    s = _with_derivatives(rotation)
    w = _omega_rows(omega_nb, len(s))
    scale = 1.0 / np.linalg.norm(w, axis=1)[:, None]
    rows = [skew(w * scale).reshape(-1, 3)]
    rhs = [((np.cross(w, s.accel) + s.d1_accel) * scale).reshape(-1)]

    acc = accelerated.take(accelerated.derivative_mask) if accelerated.has_derivatives else accelerated
    rho_dot = specific_force_norm_rate(v_ref, earth)
    keep = accelerated.derivative_mask if accelerated.has_derivatives else np.ones(len(accelerated), bool)
    rho_dot = rho_dot[keep]
    fd = acc.d1_accel
    n = np.linalg.norm(fd, axis=1)
    ok = n > 0
    if np.any(ok):
        rows.append(2.0 * fd[ok] / n[ok, None])
        rhs.append((2.0 * np.einsum("ij,ij->i", fd[ok], acc.accel[ok]) - rho_dot[ok]) / n[ok])
    a = np.vstack(rows)
    b = np.concatenate(rhs)
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] <= eps_rank * sv[0]:
        raise ParallelFdot("acceleration adds no information along the rotation axis")
    return np.linalg.lstsq(a, b, rcond=None)[0]


def gyro_bias_for(ba, cands: BiasCandidateSet):
    """The gyro candidate paired with a resolved accelerometer bias."""
    if not cands.feasible_pairs:
        raise NoFeasiblePair("candidate set has no feasible pairs")
    d = [np.linalg.norm(np.asarray(ba) - p[0]) for p in cands.feasible_pairs]
    return cands.feasible_pairs[int(np.argmin(d))][1]


@dataclass
class AttitudeSolution:
    ba: np.ndarray
    bg: np.ndarray
    C_bn0: np.ndarray


@dataclass
class ObserverReport:
    omega_nb_hat: np.ndarray
    candidates: Optional[BiasCandidateSet] = None
    attitude_solutions: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-ready tree in SI units with deg/h and micro-g convenience fields."""
        from .so3 import dcm_to_euler

        def vec(x):
            return None if x is None else [float(v) for v in np.ravel(x)]

        out = {"omega_nb_hat": vec(self.omega_nb_hat) if np.ndim(self.omega_nb_hat) <= 1 else None}
        if np.ndim(self.omega_nb_hat) > 1:
            out["omega_nb_hat_mean"] = vec(np.mean(self.omega_nb_hat, axis=0))
        c = self.candidates
        if c is not None:
            out["candidates"] = {
                "ba_plus": vec(c.ba_plus), "ba_minus": vec(c.ba_minus),
                "bg_plus": vec(c.bg_plus), "bg_minus": vec(c.bg_minus),
                "ba_plus_ug": vec(c.ba_plus / MICRO_G), "ba_minus_ug": vec(c.ba_minus / MICRO_G),
                "bg_plus_deg_h": vec(c.bg_plus / DEG_PER_HOUR), "bg_minus_deg_h": vec(c.bg_minus / DEG_PER_HOUR),
                "separation_a": c.separation_a,
                "separation_g": c.separation_g,
                "separation_g_deg_h": c.separation_g / DEG_PER_HOUR,
                "collapsed_a": c.collapsed_a,
                "collapsed_g": c.collapsed_g,
                "n_feasible": len(c.feasible_pairs),
            }
        sols = []
        for s in self.attitude_solutions:
            roll, yaw, pitch = dcm_to_euler(s.C_bn0)
            sols.append({
                "ba": vec(s.ba), "bg": vec(s.bg),
                "bg_deg_h": vec(np.asarray(s.bg) / DEG_PER_HOUR),
                "C_bn0": [vec(r) for r in s.C_bn0],
                "euler_deg": {"roll": float(np.degrees(roll)), "yaw": float(np.degrees(yaw)),
                              "pitch": float(np.degrees(pitch))},
            })
        out["attitude_solutions"] = sols
        out["diagnostics"] = {k: (float(v) if np.isscalar(v) else v) for k, v in self.diagnostics.items()}
        return out
