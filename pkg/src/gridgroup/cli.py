"""``gridgroup`` command line.

Every subcommand reads an optional JSON config (``--config``) and applies
flag overrides on top. Exit status: 0 on success, 2 on invalid input, 3 on
a numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import NumericalError, UnhandledContingency, ValidationError
from .pipeline import (PipelineConfig, Session, evaluate_offline, load_library,
                       parse_k_range, run_offline, run_sweep, select_controller,
                       write_contingencies)

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger('gridgroup')


def _common(p):
    p.add_argument('--config', type=Path, help="JSON configuration file")
    p.add_argument('--out', help="output directory")
    p.add_argument('--network', help="network JSON path or bundled case name")
    p.add_argument('--metric', choices=['FR', 'SR', 'PSN'])
    p.add_argument('--algorithm', help="k_centers, k_medoids, divisive_k_centers "
                                       "or divisive_k_medoids")
    p.add_argument('--k', type=int)
    p.add_argument('--norm', help="H2 or Hinf")
    p.add_argument('--workers', type=int)
    p.add_argument('--seed', type=int, help="synthesis restart seed")
    p.add_argument('--cluster-seed', type=int, help="k-medoids tie-break seed")
    p.add_argument('--restarts', type=int)
    p.add_argument('--max-iters', type=int)
    p.add_argument('--box', type=float)
    p.add_argument('--global-grid', action='store_true', default=None,
                   help="sample FR/SR on one grid shared by all contingencies")


def build_parser():
    parser = argparse.ArgumentParser(prog='gridgroup', description=__doc__.splitlines()[0])
    parser.add_argument('-v', '--verbose', action='store_true')
    sub = parser.add_subparsers(dest='command', required=True)

    for name, help_ in [('enumerate', "list non-bridge line contingencies"),
                        ('distances', "pairwise distance matrix CSV"),
                        ('cluster', "group contingencies into k groups"),
                        ('synthesize', "build the controller library for one k"),
                        ('evaluate', "score one grouping against the baselines")]:
        _common(sub.add_parser(name, help=help_))

    sw = sub.add_parser('sweep', help="evaluate a grid of metrics, algorithms and k")
    _common(sw)
    sw.add_argument('--k-range', help="e.g. 1-6, 1,3,5 or all")
    sw.add_argument('--metrics', help="comma separated, e.g. PSN,SR")
    sw.add_argument('--algorithms', help="comma separated")

    sel = sub.add_parser('select', help="controller for a failed line")
    sel.add_argument('--library', type=Path, required=True)
    sel.add_argument('--line', required=True, help="failed line id")
    return parser


def _config(args):
    overrides = {k: getattr(args, k, None) for k in
                 ('out', 'network', 'metric', 'algorithm', 'k', 'norm', 'workers', 'seed',
                  'cluster_seed', 'restarts', 'max_iters', 'box', 'global_grid')}
    if getattr(args, 'k_range', None) is not None:
        overrides['k_range'] = parse_k_range(args.k_range) if args.k_range != 'all' else 'all'
    for key in ('metrics', 'algorithms'):
        if getattr(args, key, None):
            overrides[key] = [x.strip() for x in getattr(args, key).split(',') if x.strip()]
    if args.config is not None:
        return PipelineConfig.from_json(args.config, **overrides)
    return PipelineConfig.from_dict({}, **overrides)


def _line_id(text):
    try:
        return int(text)
    except ValueError:
        return text


def _emit(obj):
    print(json.dumps(obj, indent=2))


def _run(args):
    if args.command == 'select':
        lib = load_library(args.library)
        try:
            gain = select_controller(lib, _line_id(args.line))
        except UnhandledContingency as exc:
            print(f"error: {exc}", file=sys.stderr)
            _emit({"line": _line_id(args.line), "handled": False, **exc.fallback.to_dict()})
            return EXIT_INVALID
        _emit({"line": _line_id(args.line), "handled": True, **gain.to_dict()})
        return EXIT_OK

    cfg = _config(args)
    if args.command == 'enumerate':
        _emit(write_contingencies(Session(cfg)))
    elif args.command == 'distances':
        s = Session(cfg)
        D = s.distances(cfg.metric)
        path = s.out / f"distances_{cfg.metric}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(D.to_csv())
        print(path)
    elif args.command == 'cluster':
        if cfg.k is None:
            raise ValidationError("cluster needs --k")
        s = Session(cfg)
        g = s.cluster(cfg.k, cfg.metric, cfg.algorithm)
        path = s.out / f"grouping_{cfg.metric}_{cfg.algorithm}_k{cfg.k}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(g.to_dict(s.ids), indent=2) + "\n")
        _emit(g.to_dict(s.ids))
    elif args.command == 'synthesize':
        lib = run_offline(cfg)
        print(Path(cfg.out) / 'library.json')
        _emit(lib.grouping.to_dict(lib.ids))
    elif args.command == 'evaluate':
        if cfg.k is None:
            raise ValidationError("evaluate needs --k")
        rep = evaluate_offline(cfg)
        _emit({"k": rep.k, "mean": rep.mean, "mean_nominal": rep.mean_nominal,
               "degenerate": rep.degenerate_count, "unstable": rep.unstable_count})
    elif args.command == 'sweep':
        rows = run_sweep(cfg)
        failed = sum(r.failed for r in rows)
        print(f"{len(rows)} cells, {failed} failed; summary in "
              f"{Path(cfg.out) / 'summary.csv'}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
    log.addHandler(console)
    propagate, log.propagate = log.propagate, False
    try:
        return _run(args)
    except ValidationError as exc:
        print(f"error: {_where(exc)}{exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {_where(exc)}{exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    finally:
        log.removeHandler(console)
        log.propagate = propagate


def _where(exc):
    stage = getattr(exc, 'stage', None)
    return f"[{stage}] " if stage else ''


if __name__ == '__main__':
    sys.exit(main())
