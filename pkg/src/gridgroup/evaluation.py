"""Scaled-cost scoring of groupings and sweeps over the number of groups.

For contingency ``i`` with group controller ``K_g``, per-contingency
controller ``K_i`` and all-contingency controller ``K_w``::

    s = (|F(P_i, K_g)| - |F(P_i, K_i)|) / (|F(P_i, K_w)| - |F(P_i, K_i)|)

so 0 means the grouping is as good as a dedicated controller and 1 means it
is no better than a single shared one.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .clustering import Grouping, cluster
from .errors import UnstableError, ValidationError
from .synthesis import ControllerGain, SynthesisOptions, norm_kind, plant_norm, synthesize

__all__ = ['DEGENERATE_TOL', 'scaled_cost', 'ContingencyRecord', 'EvaluationReport',
           'NormCache', 'GroupDesigner', 'Baselines', 'evaluate_grouping',
           'sweep_k', 'SweepRow', 'report_csv', 'summary_csv', 'comparison_csv']

log = logging.getLogger(__name__)

DEGENERATE_TOL = 1e-9
MONOTONE_SLACK = 0.05


def scaled_cost(norm_group, norm_best, norm_whole):
    """Scaled cost of one contingency, or None when the scale is degenerate.

    The scale is degenerate when the shared controller already performs
    within ``1e-9`` (relative) of the dedicated one. Values above 1 and
    slightly below 0 are returned as is.
    """
    vals = (norm_group, norm_best, norm_whole)
    if any(not math.isfinite(v) for v in vals):
        raise ValidationError(f"scaled_cost needs finite norms, got {vals}")
    if any(v < 0 for v in vals):
        raise ValidationError(f"scaled_cost needs nonnegative norms, got {vals}")
    denom = norm_whole - norm_best
    if denom < DEGENERATE_TOL * norm_whole:
        return None
    return (norm_group - norm_best) / denom


class NormCache:
    """Memoized closed-loop norms keyed by (contingency, gain bytes).

    Reusing one cache across evaluations is what makes the scale anchors
    exact: the same gain always yields the same float.
    """

    def __init__(self, contingencies, kind):
        self.plants = [c.model for c in contingencies]
        self.kind = norm_kind(kind)
        self._memo = {}

    def __call__(self, i, gain):
        K = getattr(gain, 'K', gain)
        key = (i, K.shape, K.tobytes())
        if key not in self._memo:
            try:
                self._memo[key] = plant_norm(self.plants[i], K, self.kind)
            except UnstableError:
                self._memo[key] = math.inf
        return self._memo[key]


class GroupDesigner:
    """Synthesize one controller per set of contingency positions, memoized.

    ``store`` may be any mapping-like object with ``get``/``put`` for
    persistence across runs; it sees the sorted member tuple.
    """

    def __init__(self, contingencies, kind, opts: SynthesisOptions | None = None,
                 store=None):
        self.contingencies = list(contingencies)
        self.kind = norm_kind(kind)
        self.opts = opts or SynthesisOptions()
        self.store = store
        self._memo = {}
        self.synthesized = 0

    @staticmethod
    def _key(members):
        return tuple(sorted(int(i) for i in members))

    def _lookup(self, key):
        if key in self._memo:
            return self._memo[key]
        hit = self.store.get(key) if self.store is not None else None
        if hit is not None:
            self._memo[key] = hit
        return hit

    def _run(self, key):
        return synthesize([self.contingencies[i].model for i in key], self.kind, self.opts)

    def _record(self, key, res):
        self.synthesized += 1
        if self.store is not None:
            self.store.put(key, res)
        self._memo[key] = res

    def design(self, members):
        """Return ``(gain, report)`` for the group, synthesizing on a miss."""
        key = self._key(members)
        hit = self._lookup(key)
        if hit is None:
            hit = self._run(key)
            self._record(key, hit)
        return hit

    def gain(self, members) -> ControllerGain:
        return self.design(members)[0]

    def design_many(self, groups, workers=1):
        """Design several groups, fanning the misses out to ``workers`` threads.

        Results are recorded in group order, so the outcome does not depend
        on the worker count.
        """
        keys = [self._key(g) for g in groups]
        todo = list(dict.fromkeys(k for k in keys if self._lookup(k) is None))
        if workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(self._run, todo))
        else:
            results = [self._run(k) for k in todo]
        for k, res in zip(todo, results):
            self._record(k, res)
        return [self._memo[k] for k in keys]


@dataclass
class Baselines:
    """Reference controllers shared by every grouping in a session."""
    whole: ControllerGain
    per_contingency: list
    nominal: ControllerGain

    @classmethod
    def build(cls, designer: GroupDesigner, nominal: ControllerGain, workers=1):
        M = len(designer.contingencies)
        designer.design_many([list(range(M))] + [[i] for i in range(M)], workers)
        return cls(designer.gain(range(M)),
                   [designer.gain([i]) for i in range(M)], nominal)


@dataclass
class ContingencyRecord:
    contingency: object
    group: int
    norm_group: float
    norm_best: float
    norm_whole: float
    norm_nominal: float
    s: float | None
    s_nominal: float | None
    degenerate: bool
    unstable: bool


@dataclass
class EvaluationReport:
    norm_kind: str
    records: list
    mean: float
    mean_nominal: float
    degenerate_count: int
    unstable_count: int
    k: int = 0

    @property
    def s(self):
        return [r.s for r in self.records]


def _score(ng, nb, nw):
    if not all(math.isfinite(v) for v in (ng, nb, nw)):
        return math.inf, False, True
    s = scaled_cost(ng, nb, nw)
    return s, s is None, False


def _mean(vals):
    vals = [v for v in vals if v is not None and math.isfinite(v)]
    return float(np.mean(vals)) if vals else math.nan


def evaluate_grouping(contingencies, grouping: Grouping, group_gains, baselines: Baselines,
                      kind, norms: NormCache | None = None, workers=1) -> EvaluationReport:
    """Score a grouping against the shared baselines.

    Parameters
    ----------
    contingencies : sequence of Contingency
    grouping : Grouping
    group_gains : sequence of ControllerGain
        One per group, indexed like ``grouping.centers``.
    baselines : Baselines
    kind : {'H2', 'Hinf'}
    norms : NormCache, optional
        Shared memo; pass the same one across calls so identical gains give
        identical norms.
    workers : int

    Notes
    -----
    A record whose group, dedicated or shared loop is unstable gets
    ``s = inf``, is flagged and left out of the mean. Degenerate records
    (``s is None``) are also left out. Both are counted.
    """
    kind = norm_kind(kind)
    cs = list(contingencies)
    if grouping.M != len(cs):
        raise ValidationError("grouping size does not match the contingency set")
    if len(group_gains) != grouping.k:
        raise ValidationError("need exactly one controller per group")
    if len(baselines.per_contingency) != len(cs):
        raise ValidationError("need one per-contingency baseline per contingency")
    norms = norms or NormCache(cs, kind)

    def row(i):
        g = grouping.assignment[i]
        return (norms(i, group_gains[g]), norms(i, baselines.per_contingency[i]),
                norms(i, baselines.whole), norms(i, baselines.nominal))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vals = list(pool.map(row, range(len(cs))))
    else:
        vals = [row(i) for i in range(len(cs))]

    records = []
    for i, (ng, nb, nw, nn) in enumerate(vals):
        s, degen, unstable = _score(ng, nb, nw)
        s_nom = _score(nn, nb, nw)[0]
        records.append(ContingencyRecord(cs[i].line_id, grouping.assignment[i],
                                         ng, nb, nw, nn, s, s_nom, degen, unstable))
    unstable = sum(r.unstable for r in records)
    if unstable:
        log.warning("%d of %d contingencies have an unstable closed loop",
                    unstable, len(records))
    return EvaluationReport(kind, records, _mean(r.s for r in records),
                            _mean(r.s_nominal for r in records),
                            sum(r.degenerate for r in records), unstable, grouping.k)


@dataclass
class SweepRow:
    metric: str
    algorithm: str
    k: int
    report: EvaluationReport | None = None
    grouping: Grouping | None = None
    gains: list = field(default_factory=list)
    error: str = ''

    @property
    def failed(self):
        return self.report is None


def sweep_k(contingencies, D, algorithm, k_range, kind, designer: GroupDesigner,
            baselines: Baselines, norms: NormCache | None = None, seed=None,
            workers=1) -> list:
    """Cluster and evaluate for every k in ``k_range``.

    Baselines and the norm memo are shared by all rows. A failing k is
    recorded with its error message and the sweep moves on.
    """
    cs = list(contingencies)
    M = len(cs)
    ks = list(k_range)
    for k in ks:
        if not 1 <= k <= M:
            raise ValidationError(f"k={k} out of range 1..{M}")
    norms = norms or NormCache(cs, kind)
    metric = getattr(D, 'metric_kind', '')
    rows = []
    for k in ks:
        row = SweepRow(metric, algorithm, k)
        try:
            g = cluster(D, k, algorithm, seed)
            designed = designer.design_many(g.groups(), workers)
            gains = [d[0] for d in designed]
            row.report = evaluate_grouping(cs, g, gains, baselines, kind, norms, workers)
            row.grouping, row.gains = g, gains
        except Exception as exc:  # noqa: BLE001 - a cell failure must not stop the sweep
            row.error = f"{type(exc).__name__}: {exc}"
            log.error("sweep cell %s/%s k=%d failed: %s", metric, algorithm, k, row.error)
        rows.append(row)
    _check_monotone(rows)
    return rows


def _check_monotone(rows):
    best = math.inf
    for r in rows:
        if r.failed or not math.isfinite(r.report.mean):
            continue
        if r.report.mean > best + MONOTONE_SLACK:
            log.warning("%s/%s: mean %.4f at k=%d exceeds earlier best %.4f by more "
                        "than %.2f", r.metric, r.algorithm, r.report.mean, r.k, best,
                        MONOTONE_SLACK)
        best = min(best, r.report.mean)


def _fmt(x):
    if x is None:
        return ''
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return 'inf' if x == math.inf else 'nan' if math.isnan(x) else f"{x:.17g}"
    return str(x)


REPORT_FIELDS = ['metric', 'algorithm', 'k', 'contingency', 'group', 'norm_group',
                 'norm_best', 'norm_whole', 'norm_nominal', 's', 's_nominal',
                 'degenerate', 'unstable']
SUMMARY_FIELDS = ['metric', 'algorithm', 'k', 'mean', 'mean_nominal',
                  'degenerate', 'unstable', 'status']


def report_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator='\n')
    w.writerow(REPORT_FIELDS)
    for row in rows:
        if row.failed:
            continue
        for r in row.report.records:
            w.writerow([_fmt(x) for x in (row.metric, row.algorithm, row.k, r.contingency,
                                           r.group, r.norm_group, r.norm_best, r.norm_whole,
                                           r.norm_nominal, r.s, r.s_nominal, r.degenerate,
                                           r.unstable)])
    return buf.getvalue()


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator='\n')
    w.writerow(SUMMARY_FIELDS)
    for row in rows:
        if row.failed:
            w.writerow([row.metric, row.algorithm, row.k, '', '', '', '',
                        'failed: ' + row.error])
            continue
        rep = row.report
        w.writerow([_fmt(x) for x in (row.metric, row.algorithm, row.k, rep.mean,
                                       rep.mean_nominal, rep.degenerate_count,
                                       rep.unstable_count, 'ok')])
    return buf.getvalue()


def comparison_csv(rows) -> str:
    """Wide table: one row per k, one mean column per metric/algorithm pair."""
    methods = []
    for r in rows:
        name = f"{r.metric}+{r.algorithm}"
        if name not in methods:
            methods.append(name)
    table = {}
    for r in rows:
        val = '' if r.failed else _fmt(r.report.mean)
        table.setdefault(r.k, {})[f"{r.metric}+{r.algorithm}"] = val
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator='\n')
    w.writerow(['k'] + methods)
    for k in sorted(table):
        w.writerow([k] + [table[k].get(m, '') for m in methods])
    return buf.getvalue()
