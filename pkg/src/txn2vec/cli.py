"""Command-line entry point: one subcommand per pipeline stage.

Flag precedence: command-line flags override the JSON config file
(``--config``), which overrides built-in defaults.  Exit codes: 0 ok,
1 usage error, 2 data error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, downstream, evaluate, ingest, pairing, sgns, synthgen, vocab
from .errors import DataError, TrainingDiverged, UsageError

logger = logging.getLogger(__name__)

DEFAULTS: dict[str, dict] = {
    "synth": {
        "merchants": 1000,
        "brands": 400,
        "categories": 20,
        "regions": 10,
        "accounts": 5000,
        "tiers": 3,
        "txn_rate": 40.0,
        "session_window": 300,
        "fraud_merchant_fraction": 0.05,
        "fraud_txn_rate": 0.3,
        "seed": 0,
        "out": "market",
    },
    "pairs": {
        "mode": "brand",
        "channel": "offline",
        "min_count": None,  # resolved per mode: brand 50, raw_plus_zip 1
        "grouping": "account",
        "max_fanout": 50,
        "max_errors": 0,
        "stats": False,
    },
    "train": {
        "dim": 16,
        "negatives": 5,
        "lr": 0.025,
        "epochs": 2.0,
        "seed": 1,
        "workers": 1,
        "alpha": 0.75,
        "export": "input",
        "backend": None,
    },
    "eval": {
        "holdout": 0.1,
        "score": "dot",
        "dim": 16,
        "negatives": 5,
        "lr": 0.025,
        "epochs": 2.0,
        "seed": 1,
        "workers": 1,
        "alpha": 0.75,
        "backend": None,
        "out": None,
    },
    "sweep": {
        "dims": "2,5,10,50",
        "holdout": 0.1,
        "negatives": 5,
        "lr": 0.025,
        "epochs": 2.0,
        "seed": 1,
        "workers": 1,
        "alpha": 0.75,
        "backend": None,
        "out": None,
    },
    "neighbors": {"top": 10},
    "project": {"components": "0,1", "n_components": None, "out": None},
    "direction": {"subspace": None, "scan": None},
    "analogy": {"top": 10},
    "fraud-eval": {"mode": "brand", "seed": 0, "scorer_epochs": 300, "out": None},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="txn2vec", description=__doc__)
    parser.add_argument("--config", help="JSON config file (section per subcommand)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic transaction market")
    p.add_argument("--merchants", type=int, help="number of franchise merchants [1000]")
    p.add_argument("--brands", type=int, help="number of brands [400]")
    p.add_argument("--categories", type=int, help="number of merchant categories [20]")
    p.add_argument("--regions", type=int, help="number of geographic regions [10]")
    p.add_argument("--accounts", type=int, help="number of accounts [5000]")
    p.add_argument("--tiers", type=int, help="number of price tiers [3]")
    p.add_argument("--txn-rate", type=float, help="mean transactions per account [40]")
    p.add_argument("--session-window", type=int, help="session gap bound, seconds [300]")
    p.add_argument("--fraud-merchant-fraction", type=float, help="fraction of fraud brands [0.05]")
    p.add_argument("--fraud-txn-rate", type=float, help="fraud label rate at fraud brands [0.3]")
    p.add_argument("--seed", type=int, help="generation seed [0]")
    p.add_argument("--out", help="output directory [market]")

    p = sub.add_parser("pairs", help="transactions CSV -> co-occurrence pairs file")
    p.add_argument("--input", required=True, help="transactions CSV")
    p.add_argument("--out", required=True, help="output pairs file (TSV)")
    p.add_argument("--window", type=int, help="time window in seconds (required)")
    p.add_argument("--mode", choices=ingest.RESOLUTION_MODES, help="entity resolution [brand]")
    p.add_argument("--channel", choices=("online", "offline", "both"), help="partition to keep [offline]")
    p.add_argument("--min-count", type=int, help="minimum entity occurrences [brand: 50, raw: 1]")
    p.add_argument("--grouping", choices=pairing.GROUPING_KEYS, help="pair grouping key [account]")
    p.add_argument("--max-fanout", type=int, help="pairs per anchor cap, 0 = unlimited [50]")
    p.add_argument("--max-errors", type=int, help="tolerated malformed rows [0]")
    p.add_argument("--stats", action="store_true", help="print pair statistics")

    p = sub.add_parser("train", help="pairs file -> embedding file")
    p.add_argument("--pairs", required=True, help="pairs file (TSV)")
    p.add_argument("--out", required=True, help="output embedding file")
    _train_flags(p)
    p.add_argument("--export", choices=sgns.EXPORT_MODES, help="which vectors to export [input]")

    p = sub.add_parser("eval", help="held-out link prediction on a pairs file")
    p.add_argument("--pairs", required=True, help="pairs file (TSV)")
    p.add_argument("--out", help="report file [stdout]")
    p.add_argument("--holdout", type=float, help="held-out edge fraction [0.1]")
    p.add_argument("--score", choices=("dot", "cosine"), help="edge scoring [dot]")
    _train_flags(p)

    p = sub.add_parser("sweep", help="link-prediction AUC across embedding dimensions")
    p.add_argument("--pairs", required=True, help="pairs file (TSV)")
    p.add_argument("--dims", help="comma-separated dimensions [2,5,10,50]")
    p.add_argument("--holdout", type=float, help="held-out edge fraction [0.1]")
    p.add_argument("--out", help="output file [stdout]")
    _train_flags(p, dim=False)

    p = sub.add_parser("neighbors", help="nearest neighbors of an entity")
    p.add_argument("--embeddings", required=True, help="embedding file")
    p.add_argument("--query", required=True, help="entity key")
    p.add_argument("--top", type=int, help="neighbors to show [10]")

    p = sub.add_parser("project", help="export 2-D PCA coordinates for plotting")
    p.add_argument("--embeddings", required=True, help="embedding file")
    p.add_argument("--components", help="two PCA component indices [0,1]")
    p.add_argument("--n-components", type=int, help="components to compute [max index + 1]")
    p.add_argument("--out", help="output TSV [stdout]")

    p = sub.add_parser("direction", help="direction consistency of contrast pairs")
    p.add_argument("--embeddings", required=True, help="embedding file")
    p.add_argument("--pairs-file", required=True, help="TSV of high<TAB>low entity keys")
    p.add_argument("--subspace", help="comma-separated PCA component indices")
    p.add_argument("--scan", type=int, help="scan all 2-component subspaces up to this many components")

    p = sub.add_parser("analogy", help="a - b + c analogy query")
    p.add_argument("--embeddings", required=True, help="embedding file")
    p.add_argument("-a", required=True, help="key a")
    p.add_argument("-b", required=True, help="key b")
    p.add_argument("-c", required=True, help="key c")
    p.add_argument("--top", type=int, help="results to show [10]")

    p = sub.add_parser("fraud-eval", help="fraud-classification lift from embeddings")
    p.add_argument("--input", required=True, help="labeled transactions CSV")
    p.add_argument("--embeddings", required=True, help="embedding file")
    p.add_argument("--mode", choices=ingest.RESOLUTION_MODES, help="entity resolution [brand]")
    p.add_argument("--seed", type=int, help="experiment seed [0]")
    p.add_argument("--scorer-epochs", type=int, help="projection scorer epochs [300]")
    p.add_argument("--out", help="report file [stdout]")
    return parser


def _train_flags(p: argparse.ArgumentParser, dim: bool = True) -> None:
    if dim:
        p.add_argument("--dim", type=int, help="embedding dimension [16]")
    p.add_argument("--negatives", type=int, help="negative samples per update [5]")
    p.add_argument("--lr", type=float, help="initial learning rate [0.025]")
    p.add_argument("--epochs", type=float, help="training epochs, fractional ok [2.0]")
    p.add_argument("--seed", type=int, help="training seed [1]")
    p.add_argument("--workers", type=int, help="training threads [1]")
    p.add_argument("--alpha", type=float, help="negative-sampling smoothing exponent [0.75]")
    p.add_argument("--backend", choices=("cython", "python"), help="kernel override [auto]")


def _merged(args: argparse.Namespace) -> dict:
    command = args.command
    merged = dict(DEFAULTS.get(command, {}))
    if args.config:
        with open(args.config) as fh:
            config = json.load(fh)
        section = config.get(command, {})
        unknown = set(section) - set(merged)
        if unknown:
            raise UsageError(f"config section {command!r} has unknown keys: {sorted(unknown)}")
        merged.update(section)
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose") or value is None:
            continue
        merged[key.replace("-", "_")] = value
    return merged


def _open_out(path):
    return open(path, "w") if path else sys.stdout


# ---------------------------------------------------------------- handlers


def _cmd_synth(opt: dict) -> int:
    spec = synthgen.MarketSpec(
        n_merchants=opt["merchants"],
        n_brands=opt["brands"],
        n_categories=opt["categories"],
        n_regions=opt["regions"],
        n_accounts=opt["accounts"],
        price_tiers=opt["tiers"],
        txn_rate=opt["txn_rate"],
        session_window_seconds=opt["session_window"],
        fraud_merchant_fraction=opt["fraud_merchant_fraction"],
        fraud_txn_rate=opt["fraud_txn_rate"],
        seed=opt["seed"],
    )
    out = Path(opt["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "transactions.csv", "w") as txn_fh, open(out / "ground_truth.tsv", "w") as gt_fh:
        n = synthgen.generate_market(spec, txn_fh, gt_fh)
    logger.info("wrote %d transactions to %s", n, out)
    return 0


def _load_resolved(opt: dict) -> list[ingest.ResolvedTransaction]:
    with open(opt["input"]) as fh:
        txns = list(ingest.parse_transactions(fh, max_errors=opt.get("max_errors", 0)))
    resolved = ingest.resolve_entities(txns, opt["mode"])
    channel = opt["channel"]
    if channel != "both":
        online, offline = ingest.split_by_channel(resolved)
        resolved = online if channel == "online" else offline
    min_count = opt["min_count"]
    if min_count is None:
        min_count = 50 if opt["mode"] == "brand" else 1
    return ingest.filter_low_frequency(resolved, min_count)


def _cmd_pairs(opt: dict) -> int:
    if opt.get("window") is None:
        raise UsageError("--window is required (no hidden default)")
    resolved = _load_resolved(opt)
    fanout = opt["max_fanout"]
    cfg = pairing.PairingConfig(
        window_seconds=opt["window"],
        grouping_key=opt["grouping"],
        max_fanout=None if fanout == 0 else fanout,
    )
    pairs = pairing.generate_pairs(resolved, cfg) if resolved else []
    if not pairs:
        logger.warning("no pairs generated (empty or single-entity partition)")
    with open(opt["out"], "w") as fh:
        pairing.write_pairs(pairs, fh)
    if opt["stats"]:
        stats = pairing.pair_stats(pairs)
        print(f"entities={stats.n_entities} edges={stats.n_edges} pairs={stats.n_pairs}")
        for weight, count in stats.weight_histogram.items():
            print(f"weight={weight} edges={count}")
    return 0


def _train_config(opt: dict, dim: int | None = None) -> sgns.TrainConfig:
    return sgns.TrainConfig(
        dimension=dim if dim is not None else opt["dim"],
        negatives=opt["negatives"],
        initial_lr=opt["lr"],
        epochs=opt["epochs"],
        seed=opt["seed"],
        workers=opt["workers"],
    )


def _cmd_train(opt: dict) -> int:
    with open(opt["pairs"]) as fh:
        pairs = pairing.read_pairs(fh)
    voc, edges = vocab.build_vocab(pairs)
    table = vocab.build_sampling_table(voc, opt["alpha"])
    model = sgns.train(pairs, voc, edges, table, _train_config(opt), backend=opt["backend"])
    with open(opt["out"], "w") as fh:
        sgns.export_embeddings(model, voc, fh, which=opt["export"])
    logger.info("wrote %d x %d embeddings to %s", len(voc), model.dimension, opt["out"])
    return 0


def _cmd_eval(opt: dict) -> int:
    with open(opt["pairs"]) as fh:
        pairs = pairing.read_pairs(fh)
    split = evaluate.make_holdout(pairs, opt["holdout"], opt["seed"])
    report = evaluate.evaluate_split(
        split, _train_config(opt), alpha=opt["alpha"],
        score_method=opt["score"], backend=opt["backend"],
    )
    fh = _open_out(opt["out"])
    try:
        evaluate.write_report(report, fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _cmd_sweep(opt: dict) -> int:
    with open(opt["pairs"]) as fh:
        pairs = pairing.read_pairs(fh)
    dims = [int(x) for x in str(opt["dims"]).split(",") if x]
    if not dims:
        raise UsageError("--dims must name at least one dimension")
    results = evaluate.dimension_sweep(
        pairs, dims, _train_config(opt, dim=dims[0]),
        holdout_fraction=opt["holdout"], seed=opt["seed"], backend=opt["backend"],
    )
    fh = _open_out(opt["out"])
    try:
        for d, lpa in results:
            fh.write(f"dim={d} lpa={lpa:.4f}\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _load_embeddings(path: str) -> sgns.Embeddings:
    with open(path) as fh:
        return sgns.load_embeddings(fh)


def _cmd_neighbors(opt: dict) -> int:
    emb = _load_embeddings(opt["embeddings"])
    result = analysis.nearest_neighbors(emb, opt["query"], top_n=opt["top"])
    analysis.write_ranked(result.neighbors, sys.stdout)
    return 0


def _cmd_project(opt: dict) -> int:
    emb = _load_embeddings(opt["embeddings"])
    cx, cy = (int(x) for x in str(opt["components"]).split(","))
    n_components = opt["n_components"] or max(cx, cy) + 1
    result = analysis.pca(emb.vectors, n_components)
    fh = _open_out(opt["out"])
    try:
        analysis.export_projection(emb, result, cx, cy, fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _cmd_direction(opt: dict) -> int:
    emb = _load_embeddings(opt["embeddings"])
    with open(opt["pairs_file"]) as fh:
        contrast = []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"contrast pairs file: expected 2 columns, got {line!r}")
            contrast.append((parts[0], parts[1]))
    full, _ = analysis.direction_consistency(emb, contrast)
    print(f"consistency_full={full:.4f}")
    if opt["subspace"]:
        idx = [int(x) for x in str(opt["subspace"]).split(",")]
        sub, _ = analysis.direction_consistency(emb, contrast, subspace=idx)
        print(f"consistency_subspace={sub:.4f} components={idx}")
    if opt["scan"]:
        (ci, cj), score = analysis.best_direction_subspace(emb, contrast, opt["scan"])
        print(f"best_subspace=({ci},{cj}) consistency={score:.4f}")
    return 0


def _cmd_analogy(opt: dict) -> int:
    emb = _load_embeddings(opt["embeddings"])
    ranked = analysis.analogy(emb, opt["a"], opt["b"], opt["c"], top_n=opt["top"])
    analysis.write_ranked(ranked, sys.stdout)
    return 0


def _cmd_fraud_eval(opt: dict) -> int:
    with open(opt["input"]) as fh:
        txns = list(ingest.parse_transactions(fh))
    emb = _load_embeddings(opt["embeddings"])
    report = downstream.lift_experiment(
        txns, emb, mode=opt["mode"], seed=opt["seed"], scorer_epochs=opt["scorer_epochs"]
    )
    fh = _open_out(opt["out"])
    try:
        downstream.write_lift_report(report, fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "pairs": _cmd_pairs,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "neighbors": _cmd_neighbors,
    "project": _cmd_project,
    "direction": _cmd_direction,
    "analogy": _cmd_analogy,
    "fraud-eval": _cmd_fraud_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0; usage errors exit 1
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        opt = _merged(args)
        return _HANDLERS[args.command](opt)
    except UsageError as exc:
        print(f"txn2vec: usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"txn2vec: data error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, AssertionError, ValueError) as exc:
        print(f"txn2vec: internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
