"""Continuous-time LTI models and the numerical primitives built on them.

Everything here is a pure function of immutable inputs. Matrices stored on
the model classes are read-only float arrays.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from .errors import (ConvergenceError, DimensionError, InfiniteH2Error,
                     SingularResolventError, UnstableError)

__all__ = ['StateSpaceModel', 'DynamicController', 'ClosedLoopSystem',
           'close_loop', 'open_loop', 'transfer_at', 'freqresp', 'poles',
           'invariant_zeros', 'is_hurwitz', 'solve_lyapunov', 'h2_norm',
           'hinf_norm', 'hinf_peak', 'step_response', 'sigma_max', 'Zeros']

# Eigenvalues with |Re| below this are treated as lying on the imaginary axis
# in the Hamiltonian test.
IMAG_AXIS_TOL = 1e-8
MAX_BISECTIONS = 200


def _frozen(a, name, ndim=2):
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != ndim:
        raise DimensionError(name, f"{ndim}-d array", f"got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Open-loop plant ``x' = A x + B_w w + B_u u``, ``z = C x + D w``."""
    A: np.ndarray
    B_w: np.ndarray
    B_u: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in ('A', 'B_w', 'B_u', 'C', 'D'):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        n = self.A.shape[0]
        if n < 1 or self.A.shape != (n, n):
            raise DimensionError('A', 'square', f"got {self.A.shape}")
        if self.B_w.shape[0] != n:
            raise DimensionError('A', 'B_w')
        if self.B_u.shape[0] != n:
            raise DimensionError('A', 'B_u')
        if self.C.shape[1] != n:
            raise DimensionError('A', 'C')
        if self.D.shape != (self.C.shape[0], self.B_w.shape[1]):
            raise DimensionError('C/B_w', 'D')

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B_u.shape[1]

    @property
    def n_w(self):
        return self.B_w.shape[1]

    @property
    def n_z(self):
        return self.C.shape[0]

    def replace_A(self, A):
        return StateSpaceModel(A, self.B_w, self.B_u, self.C, self.D)


@dataclass(frozen=True, eq=False)
class DynamicController:
    """State-feedback controller ``x_k' = A_k x_k + B_kx x``, ``u = C_k x_k + D_kx x``.

    With zero controller states this is the static gain ``u = D_kx x``.
    """
    A_k: np.ndarray
    B_kx: np.ndarray
    C_k: np.ndarray
    D_kx: np.ndarray

    def __post_init__(self):
        for name in ('A_k', 'B_kx', 'C_k', 'D_kx'):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        m, n = self.D_kx.shape
        n_k = self.A_k.shape[0]
        if self.A_k.shape != (n_k, n_k):
            raise DimensionError('A_k', 'square')
        if self.B_kx.shape != (n_k, n):
            raise DimensionError('A_k/D_kx', 'B_kx', f"got {self.B_kx.shape}")
        if self.C_k.shape != (m, n_k):
            raise DimensionError('A_k/D_kx', 'C_k', f"got {self.C_k.shape}")

    @classmethod
    def static(cls, K):
        K = np.atleast_2d(np.asarray(K, dtype=float))
        m, n = K.shape
        return cls(np.zeros((0, 0)), np.zeros((0, n)), np.zeros((m, 0)), K)

    @property
    def n_k(self):
        return self.A_k.shape[0]


@dataclass(frozen=True, eq=False)
class ClosedLoopSystem:
    """Closed loop from disturbance ``w`` to performance output ``z``."""
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in ('A', 'B', 'C', 'D'):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or n < 1:
            raise DimensionError('A', 'square', f"got {self.A.shape}")
        if self.B.shape[0] != n:
            raise DimensionError('A', 'B')
        if self.C.shape[1] != n:
            raise DimensionError('A', 'C')
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise DimensionError('C/B', 'D')

    @property
    def n(self):
        return self.A.shape[0]


def close_loop(plant: StateSpaceModel, ctrl) -> ClosedLoopSystem:
    """Interconnect a plant with a state-feedback controller.

    ``ctrl`` may be a :class:`DynamicController` or a plain ``m x n`` gain
    array, which is treated as a static controller.
    """
    if not isinstance(ctrl, DynamicController):
        ctrl = DynamicController.static(ctrl)
    if ctrl.D_kx.shape != (plant.m, plant.n):
        raise DimensionError('plant (B_u, A)', 'controller D_kx',
                             f"expected {(plant.m, plant.n)}, "
                             f"got {ctrl.D_kx.shape}")
    n_k = ctrl.n_k
    A_cl = np.block([
        [plant.A + plant.B_u @ ctrl.D_kx, plant.B_u @ ctrl.C_k],
        [ctrl.B_kx, ctrl.A_k],
    ])
    B_cl = np.vstack([plant.B_w, np.zeros((n_k, plant.n_w))])
    C_cl = np.hstack([plant.C, np.zeros((plant.n_z, n_k))])
    return ClosedLoopSystem(A_cl, B_cl, C_cl, plant.D)


def open_loop(plant: StateSpaceModel) -> ClosedLoopSystem:
    return ClosedLoopSystem(plant.A, plant.B_w, plant.C, plant.D)


def poles(sys) -> np.ndarray:
    return np.linalg.eigvals(sys.A)


def is_hurwitz(A) -> bool:
    return bool(np.max(np.linalg.eigvals(A).real) < 0)


class Zeros(NamedTuple):
    values: np.ndarray
    available: bool


def invariant_zeros(sys) -> Zeros:
    """Finite invariant zeros of a square system.

    Computed as the finite generalized eigenvalues of the pencil
    ``([A, B; C, D], diag(I, 0))``. For non-square systems no zeros are
    reported and ``available`` is False.
    """
    p, q = sys.D.shape
    if p != q:
        return Zeros(np.empty(0, dtype=complex), False)
    n = sys.n
    M = np.block([[sys.A, sys.B], [sys.C, sys.D]])
    E = np.zeros_like(M)
    E[:n, :n] = np.eye(n)
    ab = sla.eigvals(M, E, homogeneous_eigvals=True)
    alpha, beta = ab[0], ab[1]
    finite = np.abs(beta) > 1e-10 * np.maximum(np.abs(alpha), 1.0)
    return Zeros(alpha[finite] / beta[finite], True)


def _check_resolvent(sys, omegas):
    lam = poles(sys)
    scale = max(1.0, np.linalg.norm(sys.A, 1))
    gap = np.abs(1j * omegas[:, None] - lam[None, :]).min(axis=1)
    bad = np.flatnonzero(gap <= 1e-12 * scale)
    if bad.size:
        raise SingularResolventError(float(omegas[bad[0]]))


def _resolvent_solve(sys, omegas):
    pencil = 1j * omegas[:, None, None] * np.eye(sys.n) - sys.A
    rhs = np.broadcast_to(sys.B.astype(complex), (len(omegas),) + sys.B.shape)
    return sys.C @ np.linalg.solve(pencil, rhs) + sys.D


def freqresp(sys, omegas) -> np.ndarray:
    """Frequency response ``C (jwI - A)^-1 B + D`` at each of ``omegas``.

    Returns an array of shape ``(len(omegas), n_z, n_w)``.
    """
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    _check_resolvent(sys, omegas)
    return _resolvent_solve(sys, omegas)


def transfer_at(sys, omega: float) -> np.ndarray:
    return freqresp(sys, [omega])[0]


def sigma_max(G) -> float:
    return float(np.linalg.norm(G, 2))


def solve_lyapunov(A, Q) -> np.ndarray:
    """Solve ``A X + X A^T + Q = 0`` for symmetric ``X``.

    Uses the Bartels-Stewart real-Schur method. A warning carrying the
    residual is issued if the result misses the residual bound
    ``||res||_F <= 1e-8 (||A|| ||X|| + ||Q||)``.
    """
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or Q.shape != A.shape:
        raise DimensionError('A', 'Q')
    if not is_hurwitz(A):
        raise UnstableError("Lyapunov solve requires a Hurwitz A")
    X = sla.solve_continuous_lyapunov(A, -Q)
    X = (X + X.T) / 2
    res = np.linalg.norm(A @ X + X @ A.T + Q)
    bound = 1e-8 * (np.linalg.norm(A) * np.linalg.norm(X) + np.linalg.norm(Q))
    if res > bound:
        warnings.warn(f"ill-conditioned Lyapunov solve: residual {res:.3e} "
                      f"exceeds bound {bound:.3e}", RuntimeWarning)
    return X


def h2_norm(sys: ClosedLoopSystem) -> float:
    if not is_hurwitz(sys.A):
        raise UnstableError("H2 norm of an unstable system")
    if np.any(sys.D != 0):
        raise InfiniteH2Error("nonzero feedthrough makes the H2 norm infinite")
    X = solve_lyapunov(sys.A, sys.B @ sys.B.T)
    return float(np.sqrt(max(np.trace(sys.C @ X @ sys.C.T), 0.0)))


def _hamiltonian(sys, gamma):
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    R = D.T @ D - gamma ** 2 * np.eye(D.shape[1])
    S = D @ D.T - gamma ** 2 * np.eye(D.shape[0])
    F = A - B @ np.linalg.solve(R, D.T @ C)
    return np.block([[F, -gamma * B @ np.linalg.solve(R, B.T)],
                     [gamma * C.T @ np.linalg.solve(S, C), -F.T]])


def _crossings(sys, gamma):
    """Nonnegative frequencies where some singular value of G equals gamma."""
    eigs = np.linalg.eigvals(_hamiltonian(sys, gamma))
    on_axis = eigs[np.abs(eigs.real) <= IMAG_AXIS_TOL]
    return np.unique(np.abs(on_axis.imag))


def _sigma_at(sys, omegas):
    # callers guarantee a Hurwitz A, so the resolvent exists on the axis
    G = _resolvent_solve(sys, np.atleast_1d(np.asarray(omegas, dtype=float)))
    return np.linalg.norm(G, 2, axis=(1, 2))


def hinf_peak(sys: ClosedLoopSystem, rel_tol: float = 1e-6):
    """H-infinity norm and the frequency attaining it.

    Bisection on gamma with the Hamiltonian imaginary-axis test. Every
    singular value sampled along the way is a valid lower bound, so the
    bracket ``[lo, hi]`` is tightened from below with sampled values as well
    as with bisection midpoints. Once ``hi - lo <= rel_tol * lo`` the peak is
    polished by a bounded scalar search inside the last crossing interval.

    Returns
    -------
    gamma : float
        Norm estimate with ``gamma in [lo, hi]``.
    omega : float
        Frequency (rad/s) of the largest sampled singular value.
    """
    if not 0 < rel_tol <= 1e-2:
        raise ValueError("rel_tol must lie in (0, 1e-2]")
    if not is_hurwitz(sys.A):
        raise UnstableError("H-infinity norm of an unstable system")

    sd = sigma_max(sys.D)
    s0 = float(_sigma_at(sys, [0.0])[0])
    lo, w_best = (s0, 0.0) if s0 >= sd else (sd, np.inf)
    if lo == 0.0:
        # zero DC gain and feedthrough: seed from the pole magnitudes
        w = np.abs(poles(sys))
        s = _sigma_at(sys, w)
        if s.max() == 0.0:
            return 0.0, 0.0
        lo, w_best = float(s.max()), float(w[np.argmax(s)])

    peaks = []  # crossing intervals of the last successful probe with sigma above its level

    def probe(gamma):
        # True when ||G|| >= gamma; raises lo with every sampled value
        nonlocal lo, w_best, peaks
        w = _crossings(sys, gamma)
        if w.size == 0:
            return False
        edges = np.concatenate([[0.0], w, [2 * w[-1] + 1.0]])
        mids = (edges[1:] + edges[:-1]) / 2
        cand = np.concatenate([w, mids])
        s = _sigma_at(sys, cand)
        j = int(np.argmax(s))
        if s[j] > lo:
            lo, w_best = float(s[j]), float(cand[j])
        s_mid = s[w.size:]
        peaks = [(edges[i], edges[i + 1]) for i in range(len(mids))
                 if s_mid[i] >= gamma]
        lo = max(lo, gamma)
        return True

    hi = 2 * lo
    steps = 0
    while probe(hi):
        hi *= 2
        steps += 1
        if steps > MAX_BISECTIONS:
            raise ConvergenceError("no upper bound found", (lo, hi))

    steps = 0
    while hi - lo > rel_tol * lo:
        mid = (lo + hi) / 2
        if not probe(mid):
            hi = mid
        steps += 1
        if steps > MAX_BISECTIONS:
            raise ConvergenceError("H-infinity bisection did not converge",
                                   (lo, hi))

    for a, b in peaks:
        res = minimize_scalar(lambda w: -_sigma_at(sys, [w])[0],
                              bounds=(a, b), method='bounded',
                              options={'xatol': 1e-12 * max(b, 1.0)})
        if -res.fun > lo:
            lo, w_best = float(-res.fun), float(res.x)
    return min(lo, hi), w_best


def hinf_norm(sys: ClosedLoopSystem, rel_tol: float = 1e-6) -> float:
    return hinf_peak(sys, rel_tol)[0]


def step_response(sys: ClosedLoopSystem, times) -> np.ndarray:
    """Unit-step responses from every disturbance channel.

    ``out[k, :, j]`` is the output at ``times[k]`` for a unit step on input
    ``j`` applied at t=0 with zero initial state. States are propagated
    exactly between sample times with the augmented exponential
    ``expm([[A, B], [0, 0]] dt)``; intervals whose lengths agree to within
    1e-12 relative share a propagator.
    """
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("times must be a nonempty 1-d sequence")
    if t[0] < 0 or np.any(np.diff(t) < 0):
        raise ValueError("times must be nondecreasing and start at t >= 0")

    n, nw = sys.B.shape
    aug = np.zeros((n + nw, n + nw))
    aug[:n, :n] = sys.A
    aug[:n, n:] = sys.B
    cache = {}

    def propagator(dt):
        for key, val in cache.items():
            if abs(key - dt) <= 1e-12 * key:
                return val
        E = sla.expm(aug * dt)
        cache[dt] = (E[:n, :n], E[:n, n:])
        return cache[dt]

    out = np.empty((t.size, sys.C.shape[0], nw))
    X = np.zeros((n, nw))
    prev = 0.0
    for k, tk in enumerate(t):
        dt = tk - prev
        if dt > 0:
            Phi, Gam = propagator(dt)
            X = Phi @ X + Gam
        out[k] = sys.C @ X + sys.D
        prev = tk
    return out

