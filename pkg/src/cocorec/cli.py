"""Command-line entry point: prepare / train / eval / recommend / synth / gradcheck.

Every command is reproducible from (inputs, config, seed).  Flags can also be
supplied through a flat key=value config file via --config; explicit flags
override file values.
"""

import argparse
import sys

import numpy as np

from . import brm as brm_mod
from . import evaluate as eval_mod
from . import gradcheck as gc_mod
from . import ingest, synth
from .counterfactual import CocoConfig, CocoRecommender


def _load_config_file(path):
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _apply_config_file(parser, args, argv):
    """Merge config-file values under explicit flags: file beats defaults,
    command line beats the file."""
    if not getattr(args, "config", None):
        return args
    values = _load_config_file(args.config)
    known = {a.dest: a for a in parser._actions}
    for key, raw in values.items():
        if key not in known or key == "config":
            raise SystemExit(f"unknown config key {key!r}")
        action = known[key]
        explicit = any(opt in argv for opt in action.option_strings)
        if explicit:
            continue
        typ = action.type or str
        setattr(args, key, typ(raw))
    return args


def _add_common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=0)


def _brm_config(args):
    return brm_mod.BrmConfig(
        d=args.dim, lr=args.lr, beta=args.beta, max_epochs=args.epochs,
        batch_size=args.batch_size, seed=args.seed,
    )


def _coco_config(args):
    return CocoConfig(pi=args.pi, epsilon=args.epsilon)


def build_parser():
    """Returns (parser, dict of subcommand name -> subparser)."""
    parser = argparse.ArgumentParser(prog="cocorec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = subparsers["prepare"] = sub.add_parser(
        "prepare", help="parse + filter + sessionize a raw log, build CV folds"
    )
    p.add_argument("input", help="raw log: user<TAB>item<TAB>unix_seconds (or CSV)")
    p.add_argument("--out", required=True, help="output snapshot path")
    p.add_argument("--gap-hours", type=float, default=6.0)
    p.add_argument("--min-interactions", type=int, default=10)
    p.add_argument("--n-folds", type=int, default=5)
    _add_common(p)

    p = subparsers["synth"] = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out", help="sidecar cause-label file (default: <out>.labels)")
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=300)
    p.add_argument("--sessions", type=int, default=5000)
    p.add_argument("--confound-rate", type=float, default=0.3)
    p.add_argument("--isc-rate", type=float, default=0.4)
    p.add_argument("--osc-rate", type=float, default=0.3)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--confounder-events", type=int, default=20)
    p.add_argument("--accessory-frac", type=float, default=0.3)
    p.add_argument("--preference-alpha", type=float, default=0.3)
    p.add_argument("--n-folds", type=int, default=5)
    _add_common(p)

    p = subparsers["train"] = sub.add_parser("train", help="train the base model on one fold")
    p.add_argument("--data", required=True, help="snapshot from prepare/synth")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", help="training report path (default: <out>.report.txt)")
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=128)
    _add_common(p)

    p = subparsers["eval"] = sub.add_parser("eval", help="cross-validated evaluation of one model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=eval_mod.MODELS, default="coco")
    p.add_argument("--out", help="CSV metric file")
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--pi", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--k-neighbors", type=int, default=500)
    p.add_argument("--threads", type=int, default=1)
    _add_common(p)

    p = subparsers["recommend"] = sub.add_parser("recommend", help="top-K items for a user and context")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", required=True, help="external user id")
    p.add_argument("--items", required=True, help="comma-separated external item ids (context)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--pi", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=0.1)
    _add_common(p)

    p = subparsers["gradcheck"] = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--tol", type=float, default=gc_mod.TOL)
    _add_common(p)

    return parser, subparsers


def cmd_prepare(args):
    config = ingest.IngestConfig(
        gap_hours=args.gap_hours, min_interactions=args.min_interactions,
        n_folds=args.n_folds, seed=args.seed,
    )
    dataset, folds, skipped = ingest.prepare(args.input, config)
    ingest.save_snapshot(args.out, dataset, folds)
    n_inter = dataset.n_interactions
    n_sess = len(dataset.sessions)
    print(f"skipped rows       : {skipped}")
    print(f"#sessions          : {n_sess}")
    print(f"#interactions      : {n_inter}")
    print(f"#users             : {dataset.n_users}")
    print(f"#items             : {dataset.n_items}")
    print(f"interactions/user  : {n_inter / dataset.n_users:.2f}")
    sess_inter = sum(len(s.items) for s in dataset.sessions)
    print(f"interactions/session: {sess_inter / n_sess:.2f}")
    print(f"sessions/user      : {n_sess / dataset.n_users:.2f}")
    print(f"snapshot written to {args.out}")


def cmd_synth(args):
    config = synth.SynthConfig(
        n_users=args.users, n_items=args.items, n_sessions=args.sessions,
        confound_rate=args.confound_rate, isc_rate=args.isc_rate, osc_rate=args.osc_rate,
        n_item_clusters=args.clusters, n_confounder_events=args.confounder_events,
        accessory_frac=args.accessory_frac, preference_alpha=args.preference_alpha,
        seed=args.seed,
    )
    sd = synth.generate(config)
    folds = ingest.make_folds(sd.dataset.sessions, args.n_folds, args.seed)
    ingest.save_snapshot(args.out, sd.dataset, folds)
    labels_path = args.labels_out or args.out + ".labels"
    synth.save_labels(labels_path, sd)
    print(f"generated {len(sd.dataset.sessions)} sessions / {sd.dataset.n_interactions} interactions")
    print(f"snapshot: {args.out}")
    print(f"labels  : {labels_path}")


def cmd_train(args):
    dataset, folds = ingest.load_snapshot(args.data)
    if not folds:
        raise SystemExit("snapshot has no folds; rerun prepare/synth")
    if not 0 <= args.fold < len(folds):
        raise SystemExit(f"fold must be in 0..{len(folds) - 1}")
    config = _brm_config(args)
    params, report = brm_mod.train(dataset, folds[args.fold], config, log_fn=print)
    params.save(args.out, dataset.user_vocab, dataset.item_vocab)
    report_path = args.report or args.out + ".report.txt"
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    print(f"checkpoint: {args.out}")
    print(f"report    : {report_path}")


def cmd_eval(args):
    dataset, folds = ingest.load_snapshot(args.data)
    if not folds:
        raise SystemExit("snapshot has no folds; rerun prepare/synth")
    reports, mean = eval_mod.run_cv(
        dataset, folds, args.model, _brm_config(args), _coco_config(args),
        sknn_k=args.k_neighbors, threads=args.threads, log_fn=print,
    )
    all_reports = reports + ([mean] if mean else [])
    print(eval_mod.reports_to_text(all_reports))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(eval_mod.reports_to_csv(all_reports))
        print(f"metrics written to {args.out}")


def cmd_recommend(args):
    dataset, folds = ingest.load_snapshot(args.data)
    params, _vocab = brm_mod.BrmParams.load(args.checkpoint)
    user_index = {ext: i for i, ext in enumerate(dataset.user_vocab)}
    item_index = {ext: i for i, ext in enumerate(dataset.item_vocab)}
    if args.user not in user_index:
        raise SystemExit(f"unknown user {args.user!r}")
    try:
        ctx = [item_index[tok.strip()] for tok in args.items.split(",") if tok.strip()]
    except KeyError as exc:
        raise SystemExit(f"unknown item {exc.args[0]!r}") from None
    if not ctx:
        raise SystemExit("context must contain at least one item")
    u = user_index[args.user]

    history = dataset.interactions.get(u, [])
    recent = sorted({it.item_id for it in history[-10:]})
    pool_ids = set(folds[0].train_ids) if folds else {s.session_id for s in dataset.sessions}
    pool = [s for s in dataset.sessions if s.session_id in pool_ids]
    rec = CocoRecommender(params, pool, dataset.interactions, _coco_config(args))
    event = brm_mod.EventData(
        user_id=u, recent=np.asarray(recent, dtype=np.int64),
        ctx=np.asarray(ctx, dtype=np.int64), target=-1, y_n=0.0, y_m=0.0,
        session_id=-1, session_len=len(ctx) + 1,
    )
    for rank, (item, score) in enumerate(rec.recommend(event, args.k), 1):
        print(f"{rank},{dataset.item_vocab[item]},{score:.6f}")


def cmd_gradcheck(args):
    errors, ok = gc_mod.run_suite(args.trials, args.seed, args.tol)
    for i, err in enumerate(errors):
        status = "ok" if err <= args.tol else "FAIL"
        print(f"trial {i:2d}: max rel err {err:.3e}  {status}")
    print(f"gradcheck: {'PASS' if ok else 'FAIL'} ({args.trials} trials, tol {args.tol:g})")
    return 0 if ok else 1


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    args = _apply_config_file(subparsers[args.command], args, argv)
    try:
        handler = {
            "prepare": cmd_prepare,
            "synth": cmd_synth,
            "train": cmd_train,
            "eval": cmd_eval,
            "recommend": cmd_recommend,
            "gradcheck": cmd_gradcheck,
        }[args.command]
        rc = handler(args)
    except (ingest.IngestError, brm_mod.TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
