"""Command-line pipeline: synth -> extract -> train / evaluate -> explain -> report.

Every artifact is written atomically. Failures print one JSON line
``{"error": <kind>, "message": <text>}`` on stderr and exit 1; bad flags
exit 2. Set ``CTXWL_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) for verbosity.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import __version__
from .cwlk import LabelCollisionError, RelabelParams, Vocabulary, counts_to_vector, kernel_matrix, label_counts
from .explain import explain_prediction, family_report
from .files import atomic_open, feature_record, read_stream, write_meta
from .graph import read_graphs, serialize_graph
from .harness import REGIMENS, RegimenConfig, as_samples, check_sorted, run_online, run_regimen
from .learners import BatchConfig, LearnerConfig, ModelFileError, batch_train, load_model, read_header, save_model
from .synthgen import ScenarioConfig, default_scenario, flip_scenario, generate

log = logging.getLogger("ctxwl")

LOG_ENV = "CTXWL_LOG_LEVEL"


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _params(args) -> RelabelParams:
    return RelabelParams(h=args.h, contextual=args.contextual, compress=args.compress)


def _learner(args) -> LearnerConfig:
    return LearnerConfig(kind=args.learner, eta=args.eta, a=args.a, lr=args.lr, binary=args.binary)


def _need(path, what):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")


def _write_json(path, obj):
    with atomic_open(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def _dump_vocab(vocab, path):
    with atomic_open(path) as fh:
        vocab.write(fh)


# ---- subcommands ----

def cmd_synth(args):
    if args.scenario in ("default", "flip"):
        sc = default_scenario(days=args.days, seed=args.seed)
        if args.label_noise is not None:
            sc.label_noise = args.label_noise
        if args.scenario == "flip":
            day = args.days // 2 if args.flip_day is None else args.flip_day
            sc = flip_scenario(sc, day, args.flip_family, switch_context=not args.keep_context)
    else:
        _need(args.scenario, "scenario file")
        sc = ScenarioConfig.load(args.scenario)
        sc.seed = args.seed
        sc.days = args.days if args.days_given else sc.days
        sc.__post_init__()
    graphs = generate(sc)
    with atomic_open(args.out) as fh:
        for g in graphs:
            fh.write(serialize_graph(g) + "\n")
    if args.save_scenario:
        _write_json(args.save_scenario, sc.to_dict())
    write_meta(args.out, command="synth", seed=sc.seed, scenario=args.scenario, n_graphs=len(graphs))
    log.info("wrote %d graphs over %d days to %s", len(graphs), sc.days, args.out)


def cmd_extract(args):
    _need(args.inp, "graph file")
    p = _params(args)
    graphs = read_graphs(args.inp)
    frozen = args.frozen_vocab is not None
    if frozen:
        _need(args.frozen_vocab, "frozen vocabulary")
        vocab = Vocabulary.load(args.frozen_vocab)
    else:
        vocab = Vocabulary()
    if not frozen and not args.vocab:
        raise ValueError("--vocab is required unless --frozen-vocab is given")

    def bags(comp):
        fn = lambda g: label_counts(g, p, comp)  # noqa: E731
        if args.jobs > 1:
            with ThreadPoolExecutor(args.jobs) as ex:
                return list(ex.map(fn, graphs))
        return [fn(g) for g in graphs]

    try:
        counts = bags(vocab.get_compressor() if p.compress else None)
    except LabelCollisionError as exc:
        log.warning("label compression collided (%s); writing full labels", exc)
        p = RelabelParams(p.h, p.contextual, False, p.max_h)
        counts = bags(None)

    dropped = 0
    with atomic_open(args.out) as fh:
        # vocabulary indices are issued in input order, whatever the worker count
        for g, c in zip(graphs, counts):
            vec, d = counts_to_vector(c, vocab, frozen)
            dropped += d
            fh.write(feature_record(g.graph_id, g.y, g.t, g.family, vec) + "\n")
    if args.vocab:
        _dump_vocab(vocab, args.vocab)
    if frozen:
        log.info("dropped_features=%d (labels absent from the frozen vocabulary)", dropped)
    write_meta(args.out, command="extract", seed=args.seed, h=p.h, contextual=p.contextual,
               compress=p.compress, n_graphs=len(graphs), vocab_size=len(vocab),
               frozen=frozen, dropped_features=dropped)


def cmd_kernel_matrix(args):
    _need(args.inp, "graph file")
    graphs = read_graphs(args.inp)
    K = kernel_matrix(graphs, _params(args))
    with atomic_open(args.out) as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [g.graph_id for g in graphs])
        for g, row in zip(graphs, K):
            w.writerow([g.graph_id] + [int(v) for v in row])
    write_meta(args.out, command="kernel-matrix", seed=args.seed, h=args.h,
               contextual=args.contextual, n_graphs=len(graphs))


def _load_stream(args, path):
    _need(path, "stream file")
    samples = read_stream(path)
    if not samples:
        raise ValueError(f"{path} holds no records")
    check_sorted(samples)
    return samples


def _stream_vocab(args, samples):
    """Vocabulary of a feature dump (from --vocab) or a fresh one to grow for graphs."""
    from .cwlk import SparseVector
    vector_stream = isinstance(samples[0].payload, SparseVector)
    if args.vocab and os.path.exists(args.vocab):
        return Vocabulary.load(args.vocab), vector_stream
    if vector_stream and args.vocab:
        raise FileNotFoundError(f"vocabulary not found: {args.vocab}")
    return (None if vector_stream else Vocabulary()), vector_stream


def cmd_train_stream(args):
    samples = _load_stream(args, args.inp)
    vocab, vector_stream = _stream_vocab(args, samples)
    cfg = _learner(args)
    model = cfg.build()
    if vector_stream:
        report = run_online(samples, model)
    else:
        report = run_online(samples, model, _params(args), vocab=vocab)
        if args.vocab:
            _dump_vocab(vocab, args.vocab)
    save_model(model, args.model, vocab, seed=args.seed)
    if args.report:
        _write_report(args.report, {"online": report}, args)
    log.info("trained %s on %d samples, prequential error %.4f", cfg.kind, report.scored, report.final_error)


def cmd_train_batch(args):
    samples = _load_stream(args, args.inp)
    vocab, vector_stream = _stream_vocab(args, samples)
    reg = RegimenConfig(args.window, args.window_days)
    first, last = samples[0].t, samples[-1].t
    w = reg.train_days
    lo, hi = (first, first + w - 1) if args.window in ("once", "multi-once") else (last - w + 1, last)
    chosen = [s for s in samples if lo <= s.t <= hi]
    if not chosen:
        raise ValueError(f"no samples in training window days {lo}..{hi}")
    if vector_stream:
        rows = [(s.payload, s.y) for s in chosen]
    else:
        rows = []
        p = _params(args)
        for s in chosen:
            vec, _ = counts_to_vector(label_counts(s.payload, p), vocab)
            rows.append((vec, s.y))
        if args.vocab:
            _dump_vocab(vocab, args.vocab)
    dim = len(vocab) if vocab is not None else None
    model = batch_train(rows, BatchConfig(C=args.C, seed=args.seed), dim=dim)
    save_model(model, args.model, vocab, seed=args.seed)
    log.info("trained batch model on days %d..%d (%d samples)", lo, hi, len(rows))


def _watch_list(args, vocab, vector_stream):
    if not args.watch:
        return ()
    _need(args.watch, "watch file")
    with open(args.watch, encoding="utf-8") as fh:
        items = [line.rstrip("\n") for line in fh if line.strip()]
    if not vector_stream:
        return items
    out = []
    for it in items:
        if it.isdigit():
            out.append(int(it))
        elif vocab is not None and it in vocab:
            out.append(vocab.index(it))
        else:
            raise ValueError(f"watched feature {it!r} is not in the vocabulary")
    return out


def _write_report(path, reports, args, extra=None):
    header = {"command": args.command, "seed": args.seed, "created": _now(), "version": __version__,
              "timings": {k: {"train_seconds": r.train_seconds, "predict_seconds": r.predict_seconds}
                          for k, r in reports.items()}}
    if extra:
        header.update(extra)
    body = {k: r.to_dict(include_timings=False) for k, r in reports.items()}
    _write_json(path, {"header": header, "reports": body})


def cmd_evaluate(args):
    samples = _load_stream(args, args.stream)
    vocab, vector_stream = _stream_vocab(args, samples)
    watch = _watch_list(args, vocab, vector_stream)
    kinds = REGIMENS if args.regimen == "all" else (args.regimen,)
    p = _params(args)
    score_from = args.score_from
    if score_from is None and len(kinds) > 1:
        score_from = samples[0].t + max(RegimenConfig(k, args.window_days).train_days for k in kinds)
    reports = {}
    for k in kinds:
        reports[k] = run_regimen(samples, RegimenConfig(k, args.window_days), _learner(args), p,
                                 BatchConfig(C=args.C, seed=args.seed), score_from,
                                 watch if k == "online" else ())
    _write_report(args.report, reports, args)
    if args.csv:
        _write_curves(args.csv, reports)
    for k, r in reports.items():
        log.info("%s: final cumulative error %.4f over %d samples", k, r.final_error, r.scored)


def _write_curves(path, reports):
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(["regimen", "day", "cum_error", "cum_vocab", "n_scored"])
        for k, r in reports.items():
            for row in zip(r.days, r.cum_error, r.cum_vocab, r.n_scored):
                w.writerow([k, *row])


def cmd_explain(args):
    _need(args.model, "model file")
    _need(args.vocab, "vocabulary")
    vocab = Vocabulary.load(args.vocab)
    model = load_model(args.model, vocab)
    samples = _load_stream(args, args.graph) if args.graph else []
    from .cwlk import SparseVector
    p = _params(args)
    exps = []
    for s in as_samples(samples):
        if isinstance(s.payload, SparseVector):
            x = s.payload
        else:
            x, _ = counts_to_vector(label_counts(s.payload, p), vocab, frozen=True)
        exps.append(explain_prediction(model, x, vocab, args.nu, s.id, s.family))
    families = sorted({e.family for e in exps if e.family})
    fam = {f: [c.to_dict() for c in family_report(exps, f, args.nu, vocab)] for f in families}
    header = {"command": "explain", "seed": read_header(args.model).get("seed"), "created": _now(),
              "model": os.path.basename(args.model), "nu": args.nu}
    _write_json(args.out, {"header": header, "explanations": [e.to_dict() for e in exps],
                           "families": fam})


def cmd_report(args):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(args.out_dir, exist_ok=True)
    series = {}
    for path in args.inp:
        _need(path, "report")
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        for k, r in doc.get("reports", {}).items():
            series[k] = r
    if not series:
        raise ValueError("no RunReport found in the given files")
    for k, r in series.items():
        with atomic_open(os.path.join(args.out_dir, f"{k}.csv")) as fh:
            w = csv.writer(fh)
            w.writerow(["day", "cum_error", "cum_vocab", "n_scored"])
            for row in zip(r["days"], r["cum_error"], r["cum_vocab"], r["n_scored"]):
                w.writerow(row)
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, r in series.items():
        ax.plot(r["days"], r["cum_error"], label=k)
    ax.set_xlabel("day")
    ax.set_ylabel("cumulative error")
    ax.legend()
    fig.tight_layout()
    png = os.path.join(args.out_dir, "cum_error.png")
    with atomic_open(png, "wb") as fh:
        fig.savefig(fh, format="png", metadata={"Software": None})
    plt.close(fig)


# ---- argument parsing ----

def _relabel_flags(sp):
    sp.add_argument("--h", type=int, default=2, help="kernel height")
    sp.add_argument("--contextual", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--compress", action=argparse.BooleanOptionalAction, default=False)


def _learner_flags(sp):
    sp.add_argument("--learner", choices=["cw", "pa", "perceptron", "lrsgd"], default="cw")
    sp.add_argument("--eta", type=float, default=0.9)
    sp.add_argument("--a", type=float, default=1.0, help="initial variance (CW)")
    sp.add_argument("--lr", type=float, default=0.1, help="learning rate (lrsgd)")
    sp.add_argument("--binary", action="store_true", help="use binary feature values")


def build_parser():
    ap = argparse.ArgumentParser(prog="ctxwl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--config", help="JSON file of flag defaults (keys as flag names)")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic graph stream")
    sp.add_argument("--scenario", default="default", help="default, flip or a scenario JSON file")
    sp.add_argument("--days", type=int, default=60)
    sp.add_argument("--label-noise", type=float)
    sp.add_argument("--flip-day", type=int)
    sp.add_argument("--flip-family")
    sp.add_argument("--keep-context", action="store_true", help="flip labels without re-annotating contexts")
    sp.add_argument("--save-scenario")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("extract", help="graphs to feature dump + vocabulary")
    _relabel_flags(sp)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--vocab")
    sp.add_argument("--frozen-vocab")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("kernel-matrix", help="pairwise kernel values as CSV")
    _relabel_flags(sp)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_kernel_matrix)

    sp = sub.add_parser("train-stream", help="train an online learner over a stream")
    _relabel_flags(sp)
    _learner_flags(sp)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--vocab")
    sp.add_argument("--model", required=True)
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_train_stream)

    sp = sub.add_parser("train-batch", help="train the batch baseline on one window")
    _relabel_flags(sp)
    sp.add_argument("--window", choices=[r for r in REGIMENS if r != "online"], default="once")
    sp.add_argument("--window-days", type=int, default=10)
    sp.add_argument("--C", type=float, default=1.0)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--vocab")
    sp.add_argument("--model", required=True)
    sp.set_defaults(func=cmd_train_batch)

    sp = sub.add_parser("evaluate", help="prequential evaluation of one or all regimens")
    _relabel_flags(sp)
    _learner_flags(sp)
    sp.add_argument("--stream", required=True)
    sp.add_argument("--regimen", choices=list(REGIMENS) + ["all"], default="online")
    sp.add_argument("--window-days", type=int, default=10)
    sp.add_argument("--C", type=float, default=1.0)
    sp.add_argument("--score-from", type=int)
    sp.add_argument("--vocab")
    sp.add_argument("--watch", help="file with one feature label (or index) per line")
    sp.add_argument("--report", required=True)
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("explain", help="top contributions per prediction and per family")
    _relabel_flags(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--graph", required=True)
    sp.add_argument("--nu", type=int, default=5)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_explain)

    sp = sub.add_parser("report", help="render RunReport curves to CSV and PNG")
    sp.add_argument("--in", dest="inp", nargs="+", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_report)

    for p in sub.choices.values():
        p.add_argument("--seed", type=int, default=0)
    return ap


def _apply_config(ap, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    _need(known.config, "config file")
    with open(known.config, encoding="utf-8") as fh:
        cfg = json.load(fh)
    norm = {k.replace("-", "_"): v for k, v in cfg.items()}
    if "in" in norm:
        norm["inp"] = norm.pop("in")
    for sp in ap._subparsers._group_actions[0].choices.values():
        sp.set_defaults(**norm)
        for action in sp._actions:
            if action.dest in norm:
                action.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    ap = build_parser()
    try:
        _apply_config(ap, argv)
    except (OSError, ValueError) as exc:
        _fail(exc)
        return 1
    args = ap.parse_args(argv)
    args.days_given = "--days" in argv
    if getattr(args, "nu", 1) <= 0:
        ap.error("--nu must be positive")
    try:
        args.func(args)
    except (ValueError, KeyError, OSError, ModelFileError, LabelCollisionError) as exc:
        _fail(exc)
        return 1
    return 0


def _fail(exc):
    msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
    print(json.dumps({"error": type(exc).__name__, "message": str(msg)}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
