"""Pairwise distances between contingencies.

FR and SR compare the contingency plants closed with the nominal controller,
sampled on a grid derived from the poles (and, when defined, the zeros) of
the pair. PSN compares the open-loop state matrices directly.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DimensionError, UnstableContingencyError, ValidationError
from .lti import close_loop, freqresp, invariant_zeros, is_hurwitz, poles, step_response

__all__ = ['FR', 'SR', 'PSN', 'METRICS', 'SamplingGrid', 'DistanceMatrix',
           'frequency_grid', 'time_grid', 'd_fr', 'd_sr', 'd_psn',
           'distance_matrix', 'metric_kind']

FR, SR, PSN = 'FR', 'SR', 'PSN'
METRICS = (FR, SR, PSN)

N_SAMPLES = 1000
ORIGIN_CLAMP = 1e-9
MIN_DECAY = 1e-6


def metric_kind(kind):
    k = str(kind).upper()
    if k not in METRICS:
        raise ValidationError(f"unknown metric {kind!r}; expected one of {METRICS}")
    return k


@dataclass(frozen=True, eq=False)
class SamplingGrid:
    kind: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, 'points', pts)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    metric_kind: str
    values: np.ndarray
    ids: tuple

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (len(self.ids), len(self.ids)):
            raise DimensionError('values', 'ids')
        v.setflags(write=False)
        object.__setattr__(self, 'values', v)
        object.__setattr__(self, 'ids', tuple(self.ids))

    def __len__(self):
        return len(self.ids)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator='\n')
        w.writerow(self.ids)
        for row in self.values:
            w.writerow([f"{x:.17g}" for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, metric_kind=''):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ValidationError("empty distance CSV")
        ids = tuple(int(x) if x.lstrip('-').isdigit() else x for x in rows[0])
        try:
            vals = np.array([[float(x) for x in r] for r in rows[1:]])
        except ValueError as exc:
            raise ValidationError(f"distance CSV: {exc}") from exc
        if vals.shape != (len(ids), len(ids)):
            raise ValidationError("distance CSV is not square")
        return cls(metric_kind, vals, ids)


def _pole_zero_magnitudes(sys):
    mags = [np.abs(poles(sys))]
    z = invariant_zeros(sys)
    if z.available:
        mags.append(np.abs(z.values))
    return np.concatenate(mags)


def _log_grid(a, b):
    lo, hi = a / 10, 10 * b
    pts = np.logspace(np.log10(lo), np.log10(hi), N_SAMPLES)
    pts[0], pts[-1] = lo, hi
    return SamplingGrid('frequency', pts)


def _lin_grid(c):
    return SamplingGrid('time', np.linspace(0.0, 1.0 / c, N_SAMPLES))


def frequency_grid(*systems) -> SamplingGrid:
    """1000 log-spaced frequencies on ``[a/10, 10 b]``.

    ``a`` and ``b`` are the smallest and largest distances to the origin over
    all poles and available zeros of the given systems, ignoring any closer
    to the origin than 1e-9.
    """
    mags = np.concatenate([_pole_zero_magnitudes(s) for s in systems])
    mags = mags[mags >= ORIGIN_CLAMP]
    if mags.size == 0:
        mags = np.array([ORIGIN_CLAMP])
    return _log_grid(float(mags.min()), float(mags.max()))


def time_grid(*systems) -> SamplingGrid:
    """1000 linearly spaced times on ``[0, 1/c]``, ``c`` the slowest decay rate."""
    re = np.concatenate([np.abs(poles(s).real) for s in systems])
    return _lin_grid(max(float(re.min()), MIN_DECAY))


def _fr_vector(sys, grid):
    return freqresp(sys, grid.points).ravel()


def _sr_vector(sys, grid):
    return step_response(sys, grid.points).ravel()


def d_fr(sys1, sys2, grid: SamplingGrid | None = None) -> float:
    grid = grid or frequency_grid(sys1, sys2)
    return float(np.linalg.norm(_fr_vector(sys1, grid) - _fr_vector(sys2, grid)))


def d_sr(sys1, sys2, grid: SamplingGrid | None = None) -> float:
    grid = grid or time_grid(sys1, sys2)
    return float(np.linalg.norm(_sr_vector(sys1, grid) - _sr_vector(sys2, grid)))


def d_psn(c1, c2) -> float:
    """Spectral norm of the difference of the open-loop state matrices."""
    A1 = getattr(getattr(c1, 'model', c1), 'A', c1)
    A2 = getattr(getattr(c2, 'model', c2), 'A', c2)
    A1, A2 = np.asarray(A1), np.asarray(A2)
    if A1.shape != A2.shape:
        raise DimensionError('A_1', 'A_2', f"{A1.shape} vs {A2.shape}")
    return float(np.linalg.norm(A1 - A2, 2))


def distance_matrix(contingencies, nominal, kind, workers=1,
                    global_grid=False) -> DistanceMatrix:
    """Symmetric matrix of pairwise contingency distances.

    Parameters
    ----------
    contingencies : sequence of Contingency
    nominal : DynamicController, ControllerGain or gain array
        Controller closing every contingency plant for FR and SR. Unused
        for PSN.
    kind : {'FR', 'SR', 'PSN'}
    workers : int
        Threads used for the pair computations. Results do not depend on it.
    global_grid : bool
        Sample every pair on one grid built from all closed loops instead of
        a per-pair grid. FR and SR then become Euclidean distances between
        fixed embeddings and satisfy the triangle inequality.
    """
    kind = metric_kind(kind)
    cs = list(contingencies)
    M = len(cs)
    ids = [c.line_id for c in cs]
    D = np.zeros((M, M))
    pairs = list(combinations(range(M), 2))

    if kind == PSN:
        def task(ij):
            i, j = ij
            return d_psn(cs[i], cs[j])
    else:
        gain = getattr(nominal, 'K', nominal)
        loops = [close_loop(c.model, gain) for c in cs]
        bad = [c.line_id for c, cl in zip(cs, loops) if not is_hurwitz(cl.A)]
        if bad:
            raise UnstableContingencyError(bad)
        grid_of = frequency_grid if kind == FR else time_grid
        embed = _fr_vector if kind == FR else _sr_vector
        if global_grid and M:
            grid = grid_of(*loops)
            vecs = [embed(cl, grid) for cl in loops]

            def task(ij):
                i, j = ij
                return float(np.linalg.norm(vecs[i] - vecs[j]))
        else:
            def task(ij):
                i, j = ij
                g = grid_of(loops[i], loops[j])
                return float(np.linalg.norm(embed(loops[i], g) - embed(loops[j], g)))

    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vals = list(pool.map(task, pairs))
    else:
        vals = [task(p) for p in pairs]
    for (i, j), v in zip(pairs, vals):
        D[i, j] = D[j, i] = v
    return DistanceMatrix(kind, D, ids)
