"""Square-root velocity representation of closed curves and their shape distance.

Curves are sampled on the uniform grid ``s_i = i / M`` of the unit circle.
All integrals over [0, 1] are uniform Riemann sums, so the inner product of
two fields is the mean of their pointwise dot products.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import DegenerateCurve, GridMismatch, NotConverged, ProjectionDivergence
from .isocurves import IsoGeodesicCurve, polyline_length


@dataclass(frozen=True)
class SRVFCurve:
    """SRVF samples ``q(s_i)``, shape (M, 3).

    ``length`` is the length of the curve the samples came from and
    ``closure_defect`` the norm of the displacement integral of ``samples``.
    """

    samples: np.ndarray
    length: float
    closure_defect: float
    scale_normalized: bool = False

    @property
    def M(self) -> int:
        return len(self.samples)

    @classmethod
    def from_samples(cls, samples, length=None, scale_normalized=False) -> "SRVFCurve":
        q = np.asarray(samples, dtype=float)
        if length is None:
            length = srvf_length(q)
        return cls(q, float(length), closure_defect(q), scale_normalized)


@dataclass(frozen=True)
class TangentVector:
    samples: np.ndarray
    base: SRVFCurve | None = None


@dataclass
class PathConfig:
    """Path-straightening settings.

    ``step`` is the initial step along the preconditioned descent direction;
    it is halved whenever a trial step would raise the energy.
    """

    interior_steps: int = 7
    step: float = 1.0
    max_iter: int = 500
    rtol: float = 1e-6
    projection_tol: float = 1e-10
    min_step: float = 1e-6
    scale_normalize: bool = False


@dataclass
class GeodesicPath:
    steps: np.ndarray  # (T + 1, M, 3)
    energy: float
    converged: bool
    iterations: int = 0
    energy_trace: list[float] = field(default_factory=list)

    @property
    def length(self) -> float:
        return path_length(self.steps)

    def to_record(self, pair_id, distance) -> dict:
        return {
            "pair_id": pair_id,
            "distance": float(distance),
            "iterations": self.iterations,
            "converged": self.converged,
            "energy_trace": [float(e) for e in self.energy_trace],
        }


def log_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def _samples(x) -> np.ndarray:
    if isinstance(x, (SRVFCurve, TangentVector)):
        return x.samples
    return np.asarray(x, dtype=float)


def inner_product(f, g) -> float:
    """L2 inner product on [0, 1]: mean over the grid of pointwise dot products."""
    a, b = _samples(f), _samples(g)
    if a.shape != b.shape:
        raise GridMismatch(f"grid shapes differ: {a.shape} vs {b.shape}")
    return float(np.einsum("...ij,...ij->...", a, b) / a.shape[-2])


def l2_norm(f) -> float:
    return math.sqrt(max(inner_product(f, f), 0.0))


def srvf_length(q) -> float:
    """Length of the curve represented by ``q``: the integral of |q|^2."""
    q = _samples(q)
    return float(np.mean(np.einsum("ij,ij->i", q, q)))


def _displacement(q):
    # (..., M, 3) -> (..., 3): integral of q |q|
    nq = np.linalg.norm(q, axis=-1, keepdims=True)
    return (q * nq).mean(axis=-2)


def closure_defect(q) -> float:
    return float(np.linalg.norm(_displacement(_samples(q))))


def to_srvf(curve, scale_normalize: bool = False, closed: bool | None = None) -> SRVFCurve:
    """SRVF of a sampled curve, ``q = b' / sqrt(|b'|)``.

    ``b'`` is estimated by central differences on the cyclic grid, which makes
    the result exactly closed. Open curves (``closed=False``, or an
    IsoGeodesicCurve flagged open) use one-sided differences at the two ends
    instead, so their closure defect survives for :func:`project_closed`.
    Samples are assumed uniformly spaced in the curve parameter.
    """
    if isinstance(curve, IsoGeodesicCurve):
        pts = curve.points
        if closed is None:
            closed = curve.closed
    else:
        pts = np.asarray(curve, dtype=float)
    if closed is None:
        closed = True
    M = len(pts)
    if M < 8:
        raise ValueError("SRVF needs at least 8 samples")
    if closed:
        d = (np.roll(pts, -1, axis=0) - np.roll(pts, 1, axis=0)) * (M / 2.0)
    else:
        d = np.gradient(pts, 1.0 / M, axis=0, edge_order=2)
    speed = np.linalg.norm(d, axis=1)
    mean_speed = float(speed.mean())
    if mean_speed == 0.0 or speed.min() < 1e-12 * mean_speed:
        raise DegenerateCurve("curve has (near) zero speed at some sample")
    q = d / np.sqrt(speed)[:, None]
    L = polyline_length(pts, closed)
    if scale_normalize:
        q = q / math.sqrt(srvf_length(q))
    return SRVFCurve(q, L, closure_defect(q), scale_normalize)


def from_srvf(q, base_point=(0.0, 0.0, 0.0)) -> IsoGeodesicCurve:
    """Recover the curve by integrating ``q |q|`` from ``base_point``.

    The integral is taken spectrally on the cyclic grid, which is exact for
    band-limited loops; the mean of ``q |q|`` (the closure defect) enters as a
    linear drift, so an open SRVF yields an open curve.
    """
    s = _samples(q)
    M = len(s)
    v = s * np.linalg.norm(s, axis=1, keepdims=True)
    V = np.fft.rfft(v, axis=0)
    k = np.arange(V.shape[0])
    mean = V[0].real / M
    P = np.zeros_like(V)
    P[1:] = V[1:] / (2j * np.pi * k[1:, None])
    if M % 2 == 0:
        P[-1] = 0.0  # the Nyquist mode has no well-defined antiderivative
    t = np.arange(M)[:, None] / M
    pts = np.fft.irfft(P, n=M, axis=0) + mean * t
    pts = pts - pts[0] + np.asarray(base_point, dtype=float)
    return IsoGeodesicCurve(level=math.nan, points=pts, source=-1,
                            triangles=np.zeros(0, dtype=np.int64), uniform=True)


def normal_basis(q) -> np.ndarray:
    """Gradients of the three closure functionals at ``q``.

    Shape (..., 3, M, 3): entry ``[k]`` is the L2 gradient of
    ``q -> integral of q_k |q|``, i.e. ``|q| e_k + q_k q / |q|``.
    """
    q = np.asarray(q)
    nq = np.linalg.norm(q, axis=-1, keepdims=True)
    safe = np.where(nq > 0, nq, 1.0)
    eye = np.eye(3)
    # b[..., k, i, :] = |q_i| e_k + q_i[k] q_i / |q_i|
    b = nq[..., None, :, :] * eye[:, None, :] + \
        np.swapaxes(q, -1, -2)[..., :, :, None] * (q / safe)[..., None, :, :]
    return b


def _project_batch(Q, tol, max_iter=200, normalize=False):
    # Newton iterations on the closure residual, vectorized over leading axes
    Q = np.array(Q, dtype=float)
    single = Q.ndim == 2
    if single:
        Q = Q[None]
    M = Q.shape[-2]
    lengths = np.einsum("bij,bij->b", Q, Q) / M
    r = _displacement(Q)
    res = np.linalg.norm(r, axis=-1)
    worse = np.zeros(len(Q), dtype=int)
    for _ in range(max_iter):
        active = res > tol * lengths
        if not active.any():
            break
        idx = np.flatnonzero(active)
        qa = Q[idx]
        b = normal_basis(qa)
        J = np.einsum("bkij,blij->bkl", b, b) / M
        c = np.linalg.solve(J, -r[idx][..., None])[..., 0]
        qa = qa + np.einsum("bk,bkij->bij", c, b)
        if normalize:
            qa = qa / np.sqrt(np.einsum("bij,bij->b", qa, qa) / M)[:, None, None]
        Q[idx] = qa
        r_new = _displacement(qa)
        res_new = np.linalg.norm(r_new, axis=-1)
        worse[idx] = np.where(res_new > res[idx], worse[idx] + 1, 0)
        if (worse >= 5).any():
            raise ProjectionDivergence("closure defect grew for 5 consecutive iterations")
        r[idx] = r_new
        res[idx] = res_new
        if not normalize:
            lengths[idx] = np.einsum("bij,bij->b", qa, qa) / M
    return (Q[0] if single else Q), res


def project_closed(q, tol: float = 1e-6, max_iter: int = 200) -> SRVFCurve:
    """Pull ``q`` onto the closed-curve set: defect <= ``tol`` times curve length.

    Inputs that already satisfy the tolerance are returned unchanged.
    """
    src = q if isinstance(q, SRVFCurve) else None
    s = _samples(q)
    normalize = bool(src.scale_normalized) if src is not None else False
    out, res = _project_batch(s, tol, max_iter, normalize)
    length = src.length if src is not None else srvf_length(out)
    return SRVFCurve(out, length, float(res[0]), normalize)


def tangent_projection(q, f) -> TangentVector:
    """Remove from ``f`` its components along the normal space at ``q``."""
    qs, fs = _samples(q), _samples(f)
    if qs.shape != fs.shape:
        raise GridMismatch(f"grid shapes differ: {qs.shape} vs {fs.shape}")
    out = _tangent_batch(qs[None], fs[None])[0]
    return TangentVector(out, q if isinstance(q, SRVFCurve) else None)


def _tangent_batch(Q, F, extra_radial=False):
    M = Q.shape[-2]
    b = normal_basis(Q)
    if extra_radial:
        b = np.concatenate([b, Q[:, None]], axis=1)
    J = np.einsum("bkij,blij->bkl", b, b) / M
    rhs = np.einsum("bkij,bij->bk", b, F) / M
    c = np.linalg.solve(J, rhs[..., None])[..., 0]
    return F - np.einsum("bk,bkij->bij", c, b)


def _rotation_from(A):
    # proper rotation R maximizing trace(R^T A), batched over leading axes
    U, S, Vt = np.linalg.svd(A)
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    D = np.ones(A.shape[:-2] + (3,))
    D[..., 2] = d
    R = (U * D[..., None, :]) @ Vt
    score = S[..., 0] + S[..., 1] + d * S[..., 2]
    return R, score


def align(q1, q2):
    """Best rotation and cyclic shift of ``q2`` onto ``q1``.

    Every shift ``s`` (``q2`` rolled by ``s`` samples) is paired with its
    optimal proper rotation; the pair minimizing the L2 distance wins, with
    ties going to the smallest shift. Returns ``(R, shift, aligned)`` where
    ``aligned = R @ roll(q2, shift)`` samplewise.
    """
    a, b = _samples(q1), _samples(q2)
    if a.shape != b.shape:
        raise GridMismatch(f"grid shapes differ: {a.shape} vs {b.shape}")
    if np.array_equal(a, b):
        return np.eye(3), 0, q2
    M = len(a)
    idx = (np.arange(M)[None, :] - np.arange(M)[:, None]) % M
    rolled = b[idx]  # rolled[s] = roll(b, s)
    A = np.einsum("ia,sib->sab", a, rolled)
    R, score = _rotation_from(A)
    cost = (np.einsum("ij,ij->", a, a) + np.einsum("ij,ij->", b, b) - 2.0 * score) / M
    shift = int(np.argmin(cost))
    aligned = rolled[shift] @ R[shift].T
    if isinstance(q2, SRVFCurve):
        out = SRVFCurve(aligned, q2.length, closure_defect(aligned), q2.scale_normalized)
    else:
        out = aligned
    return R[shift], shift, out


def path_energy(path) -> float:
    """Discrete path energy: half the sum of squared step norms divided by the step width."""
    steps = path.steps if isinstance(path, GeodesicPath) else np.asarray(path, dtype=float)
    if len(steps) < 2:
        raise ValueError("a path needs at least 2 steps")
    T = len(steps) - 1
    d = np.diff(steps, axis=0)
    M = steps.shape[-2]
    return float(0.5 * np.einsum("jik,jik->", d, d) / M * T)


def path_energy_gradient(steps) -> np.ndarray:
    """Derivative of :func:`path_energy` with respect to the interior step samples."""
    steps = np.asarray(steps, dtype=float)
    T = len(steps) - 1
    M = steps.shape[-2]
    return (2.0 * steps[1:-1] - steps[:-2] - steps[2:]) * (T / M)


def path_length(steps) -> float:
    d = np.diff(np.asarray(steps), axis=0)
    M = d.shape[-2]
    return float(np.sqrt(np.einsum("jik,jik->j", d, d) / M).sum())


def _palais_solve(G, dt):
    # solve (2 d_j - d_{j-1} - d_{j+1}) / dt = G_j for interior j with zero ends
    n = len(G)
    ab = np.zeros((3, n))
    ab[0, 1:] = -1.0
    ab[1, :] = 2.0
    ab[2, :-1] = -1.0
    flat = G.reshape(n, -1) * dt
    return solve_banded((1, 1), ab, flat).reshape(G.shape)


def geodesic_distance(q1, q2, config: PathConfig | None = None, strict: bool = False):
    """Shape-space geodesic between two closed SRVFs by path straightening.

    The path starts as the straight line between the endpoints with every
    interior step projected onto the closed-curve set. Each iteration moves
    the interior steps against the tangential energy gradient, smoothed by
    the inverse second difference along the path (the H1 / Palais gradient),
    and re-projects them. Returns ``(distance, path)``; the path is the
    shortest iterate visited, so distance never exceeds the initial length.
    """
    cfg = config or PathConfig()
    a, b = _samples(q1), _samples(q2)
    if a.shape != b.shape:
        raise GridMismatch(f"grid shapes differ: {a.shape} vs {b.shape}")
    T = cfg.interior_steps + 1
    dt = 1.0 / T
    t = np.linspace(0.0, 1.0, T + 1)[:, None, None]
    steps = (1.0 - t) * a + t * b
    normalize = cfg.scale_normalize
    if normalize:
        steps[1:-1] /= np.sqrt(np.einsum("jik,jik->j", steps[1:-1], steps[1:-1])
                               / a.shape[0])[:, None, None]
    steps[1:-1], _ = _project_batch(steps[1:-1], cfg.projection_tol, normalize=normalize)
    steps[0], steps[-1] = a, b

    E = path_energy(steps)
    trace = [E]
    best, best_len = steps, path_length(steps)
    step = cfg.step
    converged = E == 0.0
    it = 0
    while not converged and it < cfg.max_iter:
        it += 1
        interior = steps[1:-1]
        g = (2.0 * interior - steps[:-2] - steps[2:]) / dt
        g = _tangent_batch(interior, g, normalize)
        d = _tangent_batch(interior, _palais_solve(g, dt), normalize)
        accepted = False
        while step >= cfg.min_step:
            trial = steps.copy()
            trial[1:-1], _ = _project_batch(interior - step * d, cfg.projection_tol,
                                            normalize=normalize)
            E_new = path_energy(trial)
            if E_new <= E:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        rel = (E - E_new) / E if E > 0 else 0.0
        steps, E = trial, E_new
        trace.append(E)
        L = path_length(steps)
        if L <= best_len:
            best, best_len = steps, L
        if rel < cfg.rtol:
            converged = True
    if not converged and strict:
        raise NotConverged(f"path straightening stopped after {it} iterations")
    # energy decrease does not force length decrease; keep the shortest iterate
    path = GeodesicPath(steps=best, energy=path_energy(best), converged=converged,
                        iterations=it, energy_trace=trace)
    return best_len, path


def shape_distance(q1, q2, config: PathConfig | None = None):
    """Align ``q2`` to ``q1`` (rotation and cyclic shift), then measure the geodesic."""
    _, _, aligned = align(q1, q2)
    return geodesic_distance(q1, aligned, config)
