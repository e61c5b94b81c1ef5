"""Offline grouping and controller-library construction, online lookup.

Offline: enumerate contingencies, design a nominal controller, build the
distance matrix, cluster, and design one controller per group. Online: map
a failed line to its group controller with a dictionary lookup.

Every artifact written here is a pure function of the configuration and the
network contents. Timings go to ``run.log`` only, so repeated runs with any
worker count produce identical CSV and JSON bytes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .clustering import ALGORITHMS, Grouping, cluster
from .errors import GridGroupError, UnhandledContingency, ValidationError
from .evaluation import (Baselines, GroupDesigner, NormCache, comparison_csv,
                         evaluate_grouping, report_csv, summary_csv, sweep_k, SweepRow)
from .metrics import DistanceMatrix, distance_matrix, metric_kind
from .power import (build_dynamics, enumerate_contingencies, fixture_path, is_connected,
                    load_network)
from .synthesis import (ControllerGain, SynthesisOptions, SynthesisReport, norm_kind,
                        synthesize)

__all__ = ['SCHEMA_VERSION', 'PipelineConfig', 'ControllerLibrary', 'Session',
           'run_offline', 'run_sweep', 'select_controller', 'load_library']

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def parse_k_range(spec, M=None):
    """Parse ``"1-6"``, ``"1,3,5"``, ``"all"`` or a list into a list of ints."""
    if spec is None:
        return None
    if isinstance(spec, (list, tuple)):
        return [int(k) for k in spec]
    text = str(spec).strip()
    if text == '':
        return []
    if text == 'all':
        if M is None:
            raise ValidationError("k_range 'all' needs the contingency count")
        return list(range(1, M + 1))
    out = []
    try:
        for part in text.split(','):
            if '-' in part:
                a, b = part.split('-')
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError as exc:
        raise ValidationError(f"bad k_range {spec!r}") from exc
    return out


@dataclass(frozen=True)
class PipelineConfig:
    """Inputs of one offline run or sweep.

    ``metrics`` and ``algorithms`` default to the single ``metric`` and
    ``algorithm`` and only matter for sweeps.
    """
    network: str = 'case10ring'
    metric: str = 'SR'
    algorithm: str = 'k_medoids'
    k: int | None = None
    k_range: object = None
    metrics: tuple = ()
    algorithms: tuple = ()
    norm: str = 'H2'
    box: float = 1.0
    max_iters: int = 300
    tol: float = 1e-6
    active_window: float = 1e-3
    restarts: int = 0
    seed: int = 0
    cluster_seed: int | None = None
    workers: int = 1
    global_grid: bool = False
    out: str = 'out'

    def __post_init__(self):
        object.__setattr__(self, 'metric', metric_kind(self.metric))
        object.__setattr__(self, 'norm', norm_kind(self.norm))
        object.__setattr__(self, 'metrics',
                           tuple(metric_kind(m) for m in self.metrics) or (self.metric,))
        object.__setattr__(self, 'algorithms', tuple(self.algorithms) or (self.algorithm,))
        for a in self.algorithms + (self.algorithm,):
            if a not in ALGORITHMS:
                raise ValidationError(f"unknown clustering algorithm {a!r}; "
                                      f"expected one of {ALGORITHMS}")
        if isinstance(self.k_range, list):
            object.__setattr__(self, 'k_range', tuple(self.k_range))
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")
        if self.k is not None and (isinstance(self.k, bool) or not isinstance(self.k, int)):
            raise ValidationError(f"k must be an integer, got {self.k!r}")
        self.synthesis_options()

    @classmethod
    def from_dict(cls, d, **overrides):
        known = {f.name for f in fields(cls)}
        data = dict(d)
        data.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path, **overrides):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: top level must be an object")
        return cls.from_dict(data, **overrides)

    def synthesis_options(self):
        return SynthesisOptions(box=self.box, max_iters=self.max_iters, tol=self.tol,
                                active_window=self.active_window,
                                restarts=self.restarts, seed=self.seed)

    def network_path(self):
        p = Path(self.network)
        if p.suffix == '.json' or p.exists():
            if not p.exists():
                raise ValidationError(f"network file {p} does not exist")
            return p
        fx = fixture_path(self.network)
        if not fx.exists():
            raise ValidationError(f"no network file or bundled case named {self.network!r}")
        return fx

    def to_dict(self):
        d = asdict(self)
        d['metrics'], d['algorithms'] = list(self.metrics), list(self.algorithms)
        if isinstance(self.k_range, tuple):
            d['k_range'] = list(self.k_range)
        return d

    def output_hash(self, network_hash):
        """Hash of everything that can change an output byte."""
        d = self.to_dict()
        for volatile in ('workers', 'out', 'network'):
            d.pop(volatile)
        d['network_hash'] = network_hash
        return _hash(d)


class _DiskStore:
    """Content-addressed JSON cache of group syntheses."""

    def __init__(self, root, prefix):
        self.root = Path(root)
        self.prefix = prefix
        self.hits = 0

    def _path(self, key):
        return self.root / f"{_hash([self.prefix, list(key)])[:32]}.json"

    def get(self, key):
        p = self._path(key)
        if not p.exists():
            return None
        d = json.loads(p.read_text())
        self.hits += 1
        rep = SynthesisReport(**d['report'])
        return ControllerGain.from_dict(d), rep

    def put(self, key, res):
        gain, rep = res
        self.root.mkdir(parents=True, exist_ok=True)
        d = {"members": list(key), **gain.to_dict(), "report": rep.to_dict()}
        self._path(key).write_text(_dumps(d))


@contextmanager
def _stage(name):
    t0 = time.perf_counter()
    try:
        yield
    except GridGroupError as exc:
        if not hasattr(exc, 'stage'):
            exc.stage = name
        raise
    finally:
        log.info("stage %s: %.3f s", name, time.perf_counter() - t0)


class Session:
    """Shared state for one network, norm and synthesis setting.

    Holds the contingency set, the memoized group designer, the nominal
    controller and the norm memo, so every grouping evaluated in a session
    is scored against the same baseline objects.
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.out)
        with _stage('load'):
            self.network = load_network(config.network_path())
        self.network_hash = self.network.content_hash()
        with _stage('enumerate'):
            self.contingencies = enumerate_contingencies(self.network)
        if not self.contingencies:
            raise ValidationError("network has no non-bridge lines")
        self.ids = [c.line_id for c in self.contingencies]
        self.kind = config.norm
        self.opts = config.synthesis_options()
        cache = self.out / 'cache'
        prefix = [self.network_hash, self.kind, self.opts.to_dict()]
        self.store = _DiskStore(cache / 'gains', prefix)
        self.designer = GroupDesigner(self.contingencies, self.kind, self.opts, self.store)
        self.norms = NormCache(self.contingencies, self.kind)
        self._nominal = None
        self._baselines = None
        self._distances = {}

    @property
    def M(self):
        return len(self.contingencies)

    def bridges(self):
        return [ln.id for ln in self.network.lines if not is_connected(self.network, ln.id)]

    def check_k(self, k):
        if not 1 <= k <= self.M:
            raise ValidationError(f"k={k} out of range 1..{self.M}")

    def nominal(self) -> tuple:
        if self._nominal is None:
            with _stage('nominal'):
                store = _DiskStore(self.out / 'cache' / 'gains',
                                   ['nominal', self.network_hash, self.kind,
                                    self.opts.to_dict()])
                hit = store.get(())
                if hit is None:
                    hit = synthesize([build_dynamics(self.network)], self.kind, self.opts)
                    self.designer.synthesized += 1
                    store.put((), hit)
                self._nominal = hit
        return self._nominal

    def distances(self, metric=None) -> DistanceMatrix:
        metric = metric_kind(metric or self.config.metric)
        if metric in self._distances:
            return self._distances[metric]
        gain = self.nominal()[0]
        key = _hash([self.network_hash, metric, self.config.global_grid,
                     gain.K.tolist() if metric != 'PSN' else None])
        path = self.out / 'cache' / 'distances' / f"{key[:32]}.csv"
        with _stage(f'distances {metric}'):
            if path.exists():
                D = DistanceMatrix.from_csv(path.read_text(), metric)
            else:
                D = distance_matrix(self.contingencies, gain, metric,
                                    workers=self.config.workers,
                                    global_grid=self.config.global_grid)
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(D.to_csv())
        self._distances[metric] = D
        return D

    def cluster(self, k, metric=None, algorithm=None) -> Grouping:
        self.check_k(k)
        D = self.distances(metric)
        with _stage('cluster'):
            return cluster(D, k, algorithm or self.config.algorithm,
                           self.config.cluster_seed)

    def design_groups(self, grouping):
        with _stage('synthesize'):
            return self.designer.design_many(grouping.groups(), self.config.workers)

    def baselines(self) -> Baselines:
        if self._baselines is None:
            nominal = self.nominal()[0]
            with _stage('baselines'):
                self._baselines = Baselines.build(self.designer, nominal,
                                                  self.config.workers)
        return self._baselines


@dataclass
class ControllerLibrary:
    """Group controllers plus the lookup table used online."""
    grouping: Grouping
    ids: list
    gains: list
    nominal: ControllerGain
    norm_kind: str
    provenance: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.gains) != self.grouping.k:
            raise ValidationError("library needs exactly one controller per group")
        self._lookup = {}
        for i, cid in enumerate(self.ids):
            self._lookup[cid] = self.gains[self.grouping.assignment[i]]
            self._lookup.setdefault(str(cid), self._lookup[cid])

    def controllers_dict(self):
        out = []
        for g, gain in enumerate(self.gains):
            d = {"group": g, "norm_kind": self.norm_kind, **gain.to_dict()}
            if self.reports:
                d["report"] = self.reports[g].to_dict()
            out.append(d)
        return out

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION,
                "norm_kind": self.norm_kind,
                "contingencies": list(self.ids),
                "grouping": self.grouping.to_dict(self.ids),
                "controllers": self.controllers_dict(),
                "nominal": {"norm_kind": self.norm_kind, **self.nominal.to_dict()},
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        ver = d.get("schema_version")
        if not isinstance(ver, int) or ver > SCHEMA_VERSION or ver < 1:
            raise ValidationError(f"unsupported library schema_version {ver!r}")
        try:
            ids = list(d["contingencies"])
            grouping = Grouping.from_dict(d["grouping"], ids)
            ctrls = sorted(d["controllers"], key=lambda c: c["group"])
            gains = [ControllerGain.from_dict(c) for c in ctrls]
            reports = [SynthesisReport(**c["report"]) for c in ctrls if "report" in c]
            return cls(grouping, ids, gains, ControllerGain.from_dict(d["nominal"]),
                       d["norm_kind"], d.get("provenance", {}), reports)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed controller library: {exc!r}") from exc

    def save(self, path):
        Path(path).write_text(_dumps(self.to_dict()))


def load_library(path) -> ControllerLibrary:
    try:
        return ControllerLibrary.from_dict(json.loads(Path(path).read_text()))
    except OSError as exc:
        raise ValidationError(f"cannot read library {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def select_controller(library: ControllerLibrary, failed_line_id) -> ControllerGain:
    """Controller for the group containing ``failed_line_id``.

    A pure dictionary lookup. An unknown line (a bridge or a line outside
    the model) raises UnhandledContingency whose ``fallback`` is the nominal
    gain, so the caller always has a controller to apply.
    """
    try:
        return library._lookup[failed_line_id]
    except (KeyError, TypeError):
        raise UnhandledContingency(failed_line_id, library.nominal) from None


def _tag(metric, algorithm, k):
    return f"{metric}_{algorithm}_k{k}"


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def write_contingencies(session):
    d = {"network_hash": session.network_hash,
         "contingencies": [{"index": c.index, "line": c.line_id} for c in session.contingencies],
         "bridges": session.bridges()}
    _write(session.out / 'contingencies.json', _dumps(d))
    return d


def run_offline(config: PipelineConfig, session: Session | None = None) -> ControllerLibrary:
    """Build and persist a controller library for one (metric, algorithm, k).

    Writes the distance CSV, grouping JSON, controllers JSON and the
    library JSON under ``config.out``. Group syntheses are cached on disk
    by content hash, so a rerun with the same configuration recomputes
    nothing.
    """
    session = session or Session(config)
    if config.k is None:
        raise ValidationError("run_offline needs k")
    session.check_k(config.k)
    _log_to(session.out)
    write_contingencies(session)
    nominal = session.nominal()[0]
    D = session.distances(config.metric)
    _write(session.out / f"distances_{config.metric}.csv", D.to_csv())
    grouping = session.cluster(config.k, config.metric, config.algorithm)
    tag = _tag(config.metric, config.algorithm, config.k)
    _write(session.out / f"grouping_{tag}.json", _dumps(grouping.to_dict(session.ids)))
    designed = session.design_groups(grouping)
    lib = ControllerLibrary(grouping, session.ids, [d[0] for d in designed], nominal,
                            session.kind,
                            provenance={"network": session.network.name,
                                        "network_hash": session.network_hash,
                                        "config_hash": config.output_hash(session.network_hash),
                                        "synthesis": session.opts.to_dict(),
                                        "global_grid": config.global_grid},
                            reports=[d[1] for d in designed])
    _write(session.out / f"controllers_{tag}.json", _dumps(lib.controllers_dict()))
    lib.save(session.out / f"library_{tag}.json")
    lib.save(session.out / "library.json")
    return lib


def evaluate_offline(config: PipelineConfig, session: Session | None = None):
    """Run one offline build and score it; writes report and summary CSVs."""
    session = session or Session(config)
    lib = run_offline(config, session)
    base = session.baselines()
    with _stage('evaluate'):
        rep = evaluate_grouping(session.contingencies, lib.grouping, lib.gains, base,
                                session.kind, session.norms, config.workers)
    row = SweepRow(config.metric, config.algorithm, config.k, rep, lib.grouping, lib.gains)
    tag = _tag(config.metric, config.algorithm, config.k)
    _write(session.out / f"report_{tag}.csv", report_csv([row]))
    _write(session.out / f"summary_{tag}.csv", summary_csv([row]))
    return rep


def run_sweep(config: PipelineConfig, session: Session | None = None) -> list:
    """Evaluate every (metric, algorithm, k) cell against shared baselines.

    Writes ``report.csv``, ``summary.csv``, ``comparison.csv`` and
    ``dominance.json`` (cells where a group controller does worse on a
    contingency than the all-contingency controller, with the synthesis
    reports of both). A failing cell is recorded and the sweep continues.
    """
    session = session or Session(config)
    _log_to(session.out)
    ks = parse_k_range(config.k_range if config.k_range is not None else
                       ([config.k] if config.k is not None else 'all'), session.M)
    for k in ks:
        session.check_k(k)
    rows = []
    if ks:
        write_contingencies(session)
        base = session.baselines()
        for metric in config.metrics:
            try:
                D = session.distances(metric)
            except GridGroupError as exc:
                rows.extend(SweepRow(metric, a, k, error=f"{type(exc).__name__}: {exc}")
                            for a in config.algorithms for k in ks)
                continue
            _write(session.out / f"distances_{metric}.csv", D.to_csv())
            for algorithm in config.algorithms:
                with _stage(f'sweep {metric}/{algorithm}'):
                    rows.extend(sweep_k(session.contingencies, D, algorithm, ks,
                                        session.kind, session.designer, base,
                                        session.norms, config.cluster_seed,
                                        config.workers))
    _write(session.out / 'report.csv', report_csv(rows))
    _write(session.out / 'summary.csv', summary_csv(rows))
    _write(session.out / 'comparison.csv', comparison_csv(rows))
    _write(session.out / 'dominance.json', _dumps(dominance_violations(session, rows)))
    for row in rows:
        if not row.failed:
            tag = _tag(row.metric, row.algorithm, row.k)
            _write(session.out / 'groupings' / f"{tag}.json",
                   _dumps(row.grouping.to_dict(session.ids)))
    return rows


DOMINANCE_SLACK = 1e-3


def dominance_violations(session, rows, slack=DOMINANCE_SLACK):
    """Cells where ``|F(P_i, K_g)| > |F(P_i, K_w)| + slack``."""
    out = {"slack": slack, "cells": 0, "violations": []}
    if not rows or all(r.failed for r in rows):
        return out
    whole_rep = session.designer.design(range(session.M))[1]
    for row in rows:
        if row.failed:
            continue
        for i, r in enumerate(row.report.records):
            out["cells"] += 1
            if r.norm_group > r.norm_whole + slack:
                members = row.grouping.members(r.group)
                out["violations"].append({
                    "metric": row.metric, "algorithm": row.algorithm, "k": row.k,
                    "contingency": r.contingency, "norm_group": r.norm_group,
                    "norm_whole": r.norm_whole,
                    "group_members": [session.ids[j] for j in members],
                    "group_report": session.designer.design(members)[1].to_dict(),
                    "whole_report": whole_rep.to_dict()})
    if out["violations"]:
        log.warning("%d of %d cells: group controller worse than the shared one",
                    len(out["violations"]), out["cells"])
    return out


def _log_to(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    root = logging.getLogger('gridgroup')
    target = str((out / 'run.log').resolve())
    for h in list(root.handlers):
        if getattr(h, '_gridgroup_run', False) and h.baseFilename != target:
            root.removeHandler(h)
            h.close()
    if not any(getattr(h, 'baseFilename', None) == target for h in root.handlers):
        h = logging.FileHandler(target)
        h._gridgroup_run = True
        h.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
        root.addHandler(h)
        if root.level == logging.NOTSET or root.level > logging.INFO:
            root.setLevel(logging.INFO)
