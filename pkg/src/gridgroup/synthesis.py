"""Box-constrained static state-feedback design for groups of plants.

The design problem is ``min_K max_i ||F(P_i, K)||`` subject to
``|K[r, c]| <= box``, solved locally from ``K = 0`` in two stages: an SQP
pass on the epigraph form, then projected (sub)gradient descent with a
backtracking Armijo line search. The SQP result is only kept if it lowers
the objective, so the recorded objective trace never increases.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import NoStabilizingStart, UnstableError, ValidationError
from .lti import (_crossings, _sigma_at, close_loop, h2_norm, hinf_peak,
                  is_hurwitz, solve_lyapunov)

__all__ = ['H2', 'HINF', 'ControllerGain', 'SynthesisOptions',
           'SynthesisReport', 'Subgradient', 'plant_norm',
           'group_norm_objective', 'h2_gradient', 'hinf_subgradient',
           'synthesize', 'nominal_controller']

H2 = 'H2'
HINF = 'Hinf'
NORM_KINDS = (H2, HINF)

ARMIJO = 1e-4
MIN_STEP = 1e-10
STALL_WINDOW = 10
# top two singular values closer than this (relative) count as repeated
MULTIPLICITY_TOL = 1e-8
# distinct frequency peaks closer than this (relative) count as tied
PEAK_TIE_TOL = 1e-6


def norm_kind(kind: str) -> str:
    k = str(kind).strip().lower().replace('-', '').replace('_', '')
    if k in ('h2', '2'):
        return H2
    if k in ('hinf', 'hinfinity', 'inf', 'hoo'):
        return HINF
    raise ValidationError(f"unknown norm kind {kind!r}")


@dataclass(frozen=True, eq=False)
class ControllerGain:
    """Static feedback ``u = K x`` with every entry inside ``[-box, box]``."""
    K: np.ndarray
    box: float = 1.0

    def __post_init__(self):
        K = np.array(self.K, dtype=float, copy=True)
        if K.ndim != 2:
            raise ValidationError("K must be a 2-d array")
        if not np.all(np.abs(K) <= self.box):
            raise ValidationError(f"gain violates the box constraint {self.box}")
        K.setflags(write=False)
        object.__setattr__(self, 'K', K)

    def to_dict(self):
        return {"box": self.box, "K": self.K.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["K"], dtype=float).reshape(len(d["K"]), -1),
                   float(d.get("box", 1.0)))


@dataclass(frozen=True)
class SynthesisOptions:
    box: float = 1.0
    max_iters: int = 300
    tol: float = 1e-6
    active_window: float = 1e-3
    restarts: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.box > 0:
            raise ValidationError("box must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be at least 1")
        if self.restarts < 0:
            raise ValidationError("restarts must be nonnegative")

    def to_dict(self):
        return asdict(self)


@dataclass
class SynthesisReport:
    iterations: int
    objective: float
    plant_norms: list
    trace: list
    converged: bool
    wall_time: float = field(default=0.0, compare=False)
    nonsmooth_steps: int = 0

    def to_dict(self, timing=False):
        d = asdict(self)
        if not timing:
            d.pop('wall_time')
        return d


class Subgradient(NamedTuple):
    grad: np.ndarray
    value: float
    omega: float
    nonsmooth: bool


def plant_norm(plant, K, kind) -> float:
    """Closed-loop norm of one plant under static gain ``K``."""
    cl = close_loop(plant, np.asarray(K, dtype=float))
    if kind == H2:
        return h2_norm(cl)
    return hinf_peak(cl)[0]


def group_norm_objective(plants, K, kind) -> float:
    kind = norm_kind(kind)
    worst = 0.0
    for i, p in enumerate(plants):
        try:
            worst = max(worst, plant_norm(p, K, kind))
        except UnstableError as exc:
            raise UnstableError(f"closed loop of plant {i} is unstable",
                                index=i) from exc
    return worst


def _h2_parts(plant, K):
    A = plant.A + plant.B_u @ K
    if not is_hurwitz(A):
        raise UnstableError("closed loop is not Hurwitz")
    X = solve_lyapunov(A, plant.B_w @ plant.B_w.T)
    P = solve_lyapunov(A.T, plant.C.T @ plant.C)
    return X, P


def h2_gradient(plant, K) -> np.ndarray:
    """Gradient of the squared closed-loop H2 norm with respect to ``K``.

    ``d/dK ||F||^2 = 2 B_u^T P X`` where ``X`` and ``P`` are the closed-loop
    controllability and observability Gramians.
    """
    if np.any(plant.D != 0):
        raise ValidationError("H2 gradient needs a plant with D = 0")
    X, P = _h2_parts(plant, np.asarray(K, dtype=float))
    return 2 * plant.B_u.T @ P @ X


def _peak_gradient(plant, cl, w):
    n = cl.n
    R = np.linalg.inv(1j * w * np.eye(n) - cl.A)
    G = plant.C @ R @ plant.B_w + plant.D
    U, s, Vh = np.linalg.svd(G)
    u, v = U[:, 0], Vh[0].conj()
    p = u.conj() @ plant.C @ R @ plant.B_u
    q = R @ plant.B_w @ v
    repeated = s.size > 1 and s[1] >= s[0] * (1 - MULTIPLICITY_TOL)
    return np.real(np.outer(p, q)), repeated


def hinf_subgradient(plant, K) -> Subgradient:
    """Derivative of the closed-loop H-infinity norm with respect to ``K``.

    At the peak frequency w* with top singular pair (u, v) of G(jw*),
    perturbing K by dK changes G by ``C R B_u dK R B_w`` with
    ``R = (jw* I - A - B_u K)^-1``, so

        d sigma_max = Re(u^H C R B_u dK R B_w v)
        grad[a, b] = Re((u^H C R B_u)[a] * (R B_w v)[b])

    The peak frequency is stationary, so frequency shifts do not enter to
    first order. If the top singular value is repeated, or several
    frequency peaks tie within ``PEAK_TIE_TOL``, the average of the peak
    gradients (an element of the Clarke subdifferential) is returned and
    ``nonsmooth`` is set.
    """
    K = np.asarray(K, dtype=float)
    cl = close_loop(plant, K)
    gamma, w = hinf_peak(cl)
    if not np.isfinite(w):
        # feedthrough-dominated peak does not depend on K
        return Subgradient(np.zeros_like(K), gamma, w, False)

    peaks = [w]
    level = gamma * (1 - PEAK_TIE_TOL)
    cross = _crossings(cl, level)
    if cross.size:
        edges = np.concatenate([[0.0], cross, [2 * cross[-1] + 1.0]])
        mids = (edges[1:] + edges[:-1]) / 2
        above = _sigma_at(cl, mids) >= level
        for a, b, up in zip(edges[:-1], edges[1:], above):
            if up and not a <= w <= b:
                res = minimize_scalar(lambda x: -_sigma_at(cl, [x])[0],
                                      bounds=(a, b), method='bounded',
                                      options={'xatol': 1e-12 * max(b, 1.0)})
                if -res.fun >= level:
                    peaks.append(float(res.x))
    grads, nonsmooth = [], len(peaks) > 1
    for pw in peaks:
        g, repeated = _peak_gradient(plant, cl, pw)
        grads.append(g)
        nonsmooth = nonsmooth or repeated
    return Subgradient(np.mean(grads, axis=0), gamma, w, nonsmooth)


def _evaluate(plants, K, kind, want_grad):
    """Norms of every plant, plus (sub)gradients of the norms if requested.

    Returns ``None`` when some closed loop is unstable.
    """
    norms, grads, nonsmooth = [], [], False
    for p in plants:
        try:
            if kind == H2:
                if want_grad:
                    X, P = _h2_parts(p, K)
                    val = float(np.sqrt(max(np.trace(p.C @ X @ p.C.T), 0.0)))
                    grads.append(p.B_u.T @ P @ X / max(val, 1e-300))
                else:
                    val = plant_norm(p, K, kind)
            else:
                if want_grad:
                    sg = hinf_subgradient(p, K)
                    val = sg.value
                    grads.append(sg.grad)
                    nonsmooth = nonsmooth or sg.nonsmooth
                else:
                    val = plant_norm(p, K, kind)
        except UnstableError:
            return None
        norms.append(val)
    return np.array(norms), grads, nonsmooth


def _project_simplex(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1
    idx = np.arange(1, len(v) + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    return np.maximum(v - css[rho] / (rho + 1), 0)


def _min_norm_weights(G):
    """Simplex weights ``w`` minimizing ``||w @ G||`` (rows of G are gradients)."""
    k = len(G)
    if k == 1:
        return np.ones(1)
    Q = G @ G.T
    L = np.linalg.eigvalsh(Q)[-1]
    w = np.full(k, 1.0 / k)
    if L <= 0:
        return w
    y, s = w.copy(), 1.0
    for _ in range(2000):
        w_new = _project_simplex(y - Q @ y / L)
        s_new = (1 + np.sqrt(1 + 4 * s * s)) / 2
        y = w_new + (s - 1) / s_new * (w_new - w)
        done = np.max(np.abs(w_new - w)) < 1e-13
        w, s = w_new, s_new
        if done:
            break
    return w


def _direction(K, norms, grads, f, window, box):
    """Min-norm convex combination of the near-active plant gradients.

    Entries sitting on the box where every near-active gradient pushes
    outward are frozen first, so the projected step can still move.
    """
    active = np.flatnonzero(norms >= f * (1 - window))
    G = np.array([grads[i].ravel() for i in active])
    k = K.ravel()
    pinned = ((k >= box) & np.all(G < 0, axis=0)) | \
             ((k <= -box) & np.all(G > 0, axis=0))
    G[:, pinned] = 0.0
    return (_min_norm_weights(G) @ G).reshape(K.shape)


def _sqp_stage(plants, kind, K0, opts):
    """Epigraph SQP: ``min s`` subject to ``J_i(K) <= s`` and the box.

    ``J_i`` is the squared norm for H2 (smooth) and the norm for H-infinity.
    Returns the clipped final gain, or ``None`` if SLSQP made no progress.
    """
    m, n = K0.shape
    N = m * n
    memo = {}

    def values(z):
        key = z.tobytes()
        if key not in memo:
            K = z[:N].reshape(m, n)
            vals, jac = [], []
            for p in plants:
                try:
                    if kind == H2:
                        X, P = _h2_parts(p, K)
                        vals.append(np.trace(p.C @ X @ p.C.T))
                        jac.append(2 * (p.B_u.T @ P @ X).ravel())
                    else:
                        sg = hinf_subgradient(p, K)
                        vals.append(sg.value)
                        jac.append(sg.grad.ravel())
                except UnstableError:
                    # steer SLSQP back toward the stabilizing region
                    vals.append(1e6)
                    jac.append(np.zeros(N))
            memo.clear()
            memo[key] = (np.array(vals), np.array(jac))
        return memo[key]

    v0, _ = values(np.r_[K0.ravel(), 0.0])
    z0 = np.r_[K0.ravel(), v0.max()]
    cons = {'type': 'ineq',
            'fun': lambda z: z[N] - values(z)[0],
            'jac': lambda z: np.hstack([-values(z)[1], np.ones((len(plants), 1))])}
    with warnings.catch_warnings():
        # SLSQP clips trial points back into the box, which is what we want
        warnings.filterwarnings('ignore', 'Values in x were outside bounds')
        res = minimize(lambda z: z[N], z0, jac=lambda z: np.r_[np.zeros(N), 1.0],
                       method='SLSQP', constraints=[cons],
                       bounds=[(-opts.box, opts.box)] * N + [(0, None)],
                       options={'maxiter': opts.max_iters, 'ftol': 1e-12})
    if not np.all(np.isfinite(res.x)):
        return None
    return np.clip(res.x[:N], -opts.box, opts.box).reshape(m, n)


def _descend(plants, kind, K0, opts):
    box = opts.box
    K = np.clip(K0, -box, box)
    ev = _evaluate(plants, K, kind, True)
    if ev is None:
        raise NoStabilizingStart("starting gain does not stabilize every plant")
    norms, grads, nonsmooth = ev
    f = float(norms.max())
    trace = [f]
    nonsmooth_steps = int(nonsmooth)

    K_sqp = _sqp_stage(plants, kind, K, opts)
    if K_sqp is not None:
        ev = _evaluate(plants, K_sqp, kind, True)
        if ev is not None and ev[0].max() < f:
            K = K_sqp
            norms, grads, nonsmooth = ev
            f = float(norms.max())
            trace.append(f)
            nonsmooth_steps += int(nonsmooth)

    step = 1.0
    converged = False
    it = 0
    while it < opts.max_iters:
        accepted = None
        window = opts.active_window
        while accepted is None:
            g = _direction(K, norms, grads, f, window, box)
            t = step * 2
            while np.any(g) and t >= MIN_STEP:
                Kt = np.clip(K - t * g, -box, box)
                move = Kt - K
                if not np.any(move):
                    break
                ev_t = _evaluate(plants, Kt, kind, False)
                if ev_t is not None:
                    ft = float(ev_t[0].max())
                    if ft <= f + ARMIJO * np.sum(g * move) and ft < f:
                        accepted = (Kt, t)
                        break
                t /= 2
            if accepted is None:
                if window >= 1.0:
                    break
                # widen the near-active set before declaring stationarity
                window = min(1.0, window * 10)
        if accepted is None:
            converged = len(trace) > 1
            break
        K, step = accepted
        it += 1
        norms, grads, ns = _evaluate(plants, K, kind, True)
        nonsmooth_steps += int(ns)
        f = float(norms.max())
        trace.append(f)
        if len(trace) > STALL_WINDOW:
            old = trace[-1 - STALL_WINDOW]
            if old - f <= opts.tol * abs(old):
                converged = True
                break
    return K, norms, trace, len(trace) - 1, converged, nonsmooth_steps


def synthesize(plants, kind, opts: SynthesisOptions | None = None):
    """Design one gain minimizing the worst closed-loop norm over ``plants``.

    Parameters
    ----------
    plants : sequence of StateSpaceModel
        Plants sharing dimensions; each must be open-loop stable.
    kind : {'H2', 'Hinf'}
    opts : SynthesisOptions, optional

    Returns
    -------
    gain : ControllerGain
    report : SynthesisReport
        Objective trace of the best run; nonincreasing by construction.
    """
    kind = norm_kind(kind)
    opts = opts or SynthesisOptions()
    plants = list(plants)
    if not plants:
        raise ValidationError("synthesize needs at least one plant")
    m, n = plants[0].m, plants[0].n
    for p in plants[1:]:
        if (p.m, p.n, p.n_w, p.n_z) != (plants[0].m, n, plants[0].n_w, plants[0].n_z):
            raise ValidationError("plants in a group must share dimensions")
    t0 = time.perf_counter()

    starts = [np.zeros((m, n))]
    rng = np.random.default_rng(opts.seed)
    for _ in range(opts.restarts):
        starts.append(rng.uniform(-opts.box, opts.box, size=(m, n)) * 0.5)

    best = None
    for k, K0 in enumerate(starts):
        try:
            run = _descend(plants, kind, K0, opts)
        except NoStabilizingStart:
            if k == 0:
                raise
            continue
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    K, norms, trace, it, converged, ns = best
    report = SynthesisReport(iterations=it, objective=trace[-1],
                             plant_norms=[float(x) for x in norms],
                             trace=[float(x) for x in trace],
                             converged=bool(converged),
                             wall_time=time.perf_counter() - t0,
                             nonsmooth_steps=ns)
    return ControllerGain(K, opts.box), report


def nominal_controller(nominal_plant, kind, opts=None):
    return synthesize([nominal_plant], kind, opts)[0]
