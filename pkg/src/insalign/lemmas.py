"""Vector-geometry solvers the alignment observers are built from.

* :func:`lemma1_attitude` - attitude from vector pairs (orthogonal Procrustes).
* :func:`lemma2_point_from_spheres` - common point of equal-radius spheres.
* :func:`lemma3_const_vector` - constant ``m`` from ``a(t) x m = b(t)``.
* :func:`lemma4_cross_with_norm` - ``m`` from ``a x m = b`` and ``|m|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConstantDirection,
    DegenerateDirections,
    Inconsistent,
    NormInfeasible,
    NotPerpendicular,
)
from .so3 import skew

EPS_DIR = 1e-6
EPS_RANK = 1e-8
EPS_PERP = 1e-6
EPS_CLAMP = 1e-12


def _max_pairwise_sine(vectors) -> float:
    """Largest |sin| of the angle between the longest vector and any other."""
    v = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(v, axis=1)
    if norms.max() == 0.0:
        return 0.0
    ref = v[np.argmax(norms)]
    cross = np.linalg.norm(np.cross(ref, v), axis=1)
    denom = norms.max() * norms
    ok = denom > 0
    return float(np.max(cross[ok] / denom[ok], initial=0.0))


def lemma1_attitude(pairs, weights: Optional[Sequence[float]] = None, eps_dir: float = EPS_DIR):
    """Rotation ``C`` minimising ``sum w_k |C u_A,k - u_B,k|^2``.

    Parameters
    ----------
    pairs : sequence of (u_A, u_B)
        The same physical vector expressed in frame A and in frame B.
    weights : sequence of float, optional
        Per-pair weights, default 1.
    eps_dir : float
        Minimum angle (rad) the frame-A vectors must span.

    Returns
    -------
    ndarray, shape (3, 3)
        ``C`` mapping frame-A coordinates to frame-B coordinates.

    Raises
    ------
    DegenerateDirections
        If fewer than two pairs are given or all frame-A vectors are collinear.
    """
    if len(pairs) < 2:
        raise DegenerateDirections("at least two vector pairs are required")
    ua = np.array([p[0] for p in pairs], dtype=float)
    ub = np.array([p[1] for p in pairs], dtype=float)
    if _max_pairwise_sine(ua) <= np.sin(eps_dir):
        raise DegenerateDirections("frame-A vectors are collinear")
    w = np.ones(len(pairs)) if weights is None else np.asarray(weights, dtype=float)
    b = np.einsum("k,ki,kj->ij", w, ub, ua)
    u, _, vt = np.linalg.svd(b)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class Lemma2Solution:
    """Solution set of ``|a_k - x| = r``.

    ``kind`` is one of ``"unique"`` (rank 3, ``point`` set), ``"two_points"``
    (rank 2, ``p1``/``p2``; equal when the line is tangent), ``"circle"``
    (rank 1, ``center``/``axis``/``radius``) or ``"sphere"`` (rank 0,
    ``center``/``radius``).
    """

    rank: int
    kind: str
    point: Optional[np.ndarray] = None
    p1: Optional[np.ndarray] = None
    p2: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    axis: Optional[np.ndarray] = None
    radius: Optional[float] = None

    @property
    def unique(self) -> bool:
        return self.kind == "unique"


def lemma2_point_from_spheres(points, r: float, eps_rank: float = EPS_RANK, rel_tol: float = 1e-8):
    """Locate ``x`` with ``|a_k - x| = r`` for all given points ``a_k``.

    Differences of the sphere equations give the linear system
    ``2 (a_k - a_1)^T x = |a_k|^2 - |a_1|^2``; it is solved through its
    normal matrix ``A = sum (a_k - a_1)(a_k - a_1)^T``. When ``A`` is
    singular the remaining solution set is described instead.

    Raises
    ------
    Inconsistent
        If the rank-3 solution misses any sphere by more than ``rel_tol * r``,
        or if a rank-2 line does not meet the sphere.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    a = np.atleast_2d(np.asarray(points, dtype=float))
    if a.shape[0] < 1 or a.shape[1] != 3:
        raise ValueError("points must have shape (m, 3) with m >= 1")
    a1 = a[0]
    # centre on the centroid for conditioning; the solution shifts back at the end
    c = a.mean(axis=0)
    ac = a - c
    d = ac[1:] - ac[0]
    rhs = 0.5 * np.einsum("ki,ki->k", d, ac[1:] + ac[0])
    amat = d.T @ d
    u, s, _ = np.linalg.svd(amat)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > eps_rank * smax)) if smax > 0 else 0
    tol = rel_tol * r

    if rank == 3:
        x = np.linalg.solve(amat, d.T @ rhs) + c
        resid = np.abs(np.linalg.norm(a - x, axis=1) - r)
        if resid.max() > tol:
            raise Inconsistent(f"sphere residual {resid.max():.3e} exceeds {tol:.3e}")
        return Lemma2Solution(rank=3, kind="unique", point=x)

    if rank == 0:
        return Lemma2Solution(rank=0, kind="sphere", center=a1.copy(), radius=float(r))

    # minimum-norm particular solution of the difference system
    x0 = np.linalg.lstsq(d, rhs, rcond=None)[0] + c
    if rank == 2:
        zeta = u[:, 2]
        dv = x0 - a1
        half_b = float(dv @ zeta)
        disc = half_b**2 - (float(dv @ dv) - r * r)
        if disc < -tol * r:
            raise Inconsistent("coplanar points admit no point at distance r")
        root = np.sqrt(max(disc, 0.0))
        return Lemma2Solution(
            rank=2,
            kind="two_points",
            p1=x0 + (-half_b + root) * zeta,
            p2=x0 + (-half_b - root) * zeta,
        )

    line = u[:, 0]
    offset = float(line @ (x0 - a1))
    rad2 = r * r - offset**2
    if rad2 < -tol * r:
        raise Inconsistent("collinear points admit no point at distance r")
    return Lemma2Solution(
        rank=1,
        kind="circle",
        center=a1 + offset * line,
        axis=line,
        radius=float(np.sqrt(max(rad2, 0.0))),
    )


def lemma3_const_vector(samples, eps_dir: float = EPS_DIR):
    """Least-squares ``m`` from samples of ``a_k x m = b_k``.

    Raises
    ------
    ConstantDirection
        If every ``a_k`` is parallel to the others; ``m`` is then fixed only
        up to its component along ``a``.
    """
    a = np.array([s[0] for s in samples], dtype=float)
    b = np.array([s[1] for s in samples], dtype=float)
    if a.shape[0] < 2 or _max_pairwise_sine(a) <= eps_dir:
        raise ConstantDirection("a(t) keeps a constant direction")
    stacked = skew(a).reshape(-1, 3)
    m, _, rank, _ = np.linalg.lstsq(stacked, b.reshape(-1), rcond=None)
    if rank < 3:
        raise ConstantDirection("stacked cross-product matrix is rank deficient")
    return m


def lemma4_cross_with_norm(
    a,
    b,
    m_norm: float,
    eps_perp: float = EPS_PERP,
    eps_clamp: float = EPS_CLAMP,
):
    """Both solutions of ``a x m = b`` given ``|m|``.

    ``m = +/- a sqrt(|a|^2 |m|^2 - |b|^2) / |a|^2 - (a x b) / |a|^2``

    Returns
    -------
    (m_plus, m_minus) : tuple of ndarray
        Equal when the square-root term vanishes (``m`` perpendicular to ``a``).

    Raises
    ------
    NotPerpendicular
        If ``|a.b| >= eps_perp |a| max(|b|, |a||m|)``; no ``m`` can satisfy ``a x m = b``.
    NormInfeasible
        If ``|b| > |a| |m|`` beyond the relative clamp ``eps_clamp``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a2 = float(a @ a)
    if a2 == 0.0:
        raise ValueError("a must be non-zero")
    b2 = float(b @ b)
    if abs(float(a @ b)) >= eps_perp * np.sqrt(a2) * max(np.sqrt(b2), np.sqrt(a2) * m_norm):
        raise NotPerpendicular("b is not perpendicular to a")
    scale = a2 * m_norm * m_norm
    arg = scale - b2
    if arg < 0.0:
        if arg < -eps_clamp * max(scale, b2):
            raise NormInfeasible(f"|b| = {np.sqrt(b2):.6g} exceeds |a||m| = {np.sqrt(scale):.6g}")
        arg = 0.0
    along = a * (np.sqrt(arg) / a2)
    perp = np.cross(a, b) / a2
    if arg == 0.0:
        m = -perp
        return m, m.copy()
    return along - perp, -along - perp


def lemma4_batch(a, b, m_norm: float, eps_perp: float = EPS_PERP, eps_clamp: float = EPS_CLAMP):
    """Row-wise :func:`lemma4_cross_with_norm` for stacks of shape (n, 3).

    Returns ``(m_plus, m_minus, along_ratio)`` where ``along_ratio`` is
    ``sqrt(|a|^2 |m|^2 - |b|^2) / (|a| |m|)``, the cosine of the angle between
    ``m`` and ``a``; it is 0 when the two solutions coincide.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    a2 = np.einsum("ij,ij->i", a, a)
    if np.any(a2 == 0.0):
        raise ValueError("a must be non-zero")
    b2 = np.einsum("ij,ij->i", b, b)
    ab = np.abs(np.einsum("ij,ij->i", a, b))
    if np.any(ab >= eps_perp * np.sqrt(a2) * np.maximum(np.sqrt(b2), np.sqrt(a2) * m_norm)):
        raise NotPerpendicular("b is not perpendicular to a")
    scale = a2 * m_norm * m_norm
    arg = scale - b2
    if np.any(arg < -eps_clamp * np.maximum(scale, b2)):
        raise NormInfeasible("|b| exceeds |a||m|")
    arg = np.maximum(arg, 0.0)
    along = a * (np.sqrt(arg) / a2)[:, None]
    perp = np.cross(a, b) / a2[:, None]
    return along - perp, -along - perp, np.sqrt(arg / scale)
