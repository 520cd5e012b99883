"""Command-line surface: ingest | build-graph | synth | train | eval | infer
| attention | confusion.

Exit codes: 0 success, 1 usage error, 2 data/runtime error. Every output file
lands under --out with a fixed name so runs are diffable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset import DatasetError, read_dataset, write_dataset
from .engine import EngineError, Tensor, load_checkpoint, save_checkpoint
from .graphs import (GraphConfig, GraphError, augment_global, build_local_graph,
                     graph_to_json, split_subexpressions)
from .ink import InkError, parse_inkml, parse_lg
from .labels import LabelError, Vocabulary, align_labels, decode_labels, serialize_lg
from .metrics import (MetricsError, attention_to_csv, build_report,
                      confusion_histograms, evaluate_expression, export_attention,
                      predict_aligned, report_to_csv)
from .model import ModelConfig, ModelError, forward
from .train import (TrainConfig, TrainError, fit, history_to_csv, parse_config_text)

DATASET_NAME = "dataset.bin"
CHECKPOINT_NAME = "checkpoint.bin"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser():
    p = _Parser(prog="inkgraph",
                description="Stroke-graph modeling and recognition of "
                            "handwritten mathematical expressions.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, data=True, out=True, checkpoint=False, config=False):
        if data:
            sp.add_argument("--data", required=True, help="dataset file or directory")
        if out:
            sp.add_argument("--out", required=True, help="output directory")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="checkpoint file")
        if config:
            sp.add_argument("--config", help="key=value config file")

    def graph_flags(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--global", dest="graph_global", action="store_true",
                       default=None, help="add the master node (default)")
        g.add_argument("--local", dest="graph_global", action="store_false",
                       default=None, help="no master node")
        sp.add_argument("--fc", action="store_true", default=None,
                        help="fully connected graphs instead of visibility")

    sp = sub.add_parser("ingest", help="pack InkML + LG directories into a dataset")
    common(sp)

    sp = sub.add_parser("build-graph", help="dump modeled graphs as JSON")
    common(sp, config=True)
    graph_flags(sp)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    common(sp, data=False, config=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--count", type=int, default=None)
    sp.add_argument("--max-symbols", type=int, default=None)

    sp = sub.add_parser("train", help="fit a model")
    common(sp, config=True)
    graph_flags(sp)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--no-aux", action="store_true", help="disable auxiliary readouts")
    sp.add_argument("--no-concat", action="store_true", help="disable message concatenation")
    sp.add_argument("--no-residual", action="store_true", help="disable residual connections")
    sp.add_argument("--quiet", action="store_true", help="suppress per-epoch lines")

    for name, title in (("eval", "score predictions against ground truth"),
                        ("infer", "write predicted label graphs"),
                        ("attention", "export final-layer attention matrices"),
                        ("confusion", "export symbol/pair confusion tables")):
        sp = sub.add_parser(name, help=title)
        common(sp, checkpoint=True)
    return p


# ---------------------------------------------------------------------------
# shared helpers


def _load_config(path):
    if path is None:
        return {"model": {}, "train": {}, "data": {}}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise TrainError(f"cannot read config {path}: {e}") from None
    return parse_config_text(text)


def _resolve_dataset(path):
    p = Path(path)
    if p.is_dir():
        p = p / DATASET_NAME
    if not p.exists():
        raise DatasetError(f"no dataset at {p}")
    return read_dataset(p)


def _graph_config(cfg, args):
    data = dict(cfg["data"])
    data.pop("count", None)
    data.pop("max_symbols", None)
    if "n_max" not in data and "n_max" in cfg["train"]:
        data["n_max"] = cfg["train"]["n_max"]
    gc = GraphConfig(**data)
    if getattr(args, "graph_global", None) is not None:
        gc.global_graph = args.graph_global
    if getattr(args, "fc", None):
        gc.full_connect = True
    return gc


def _model_config(cfg, args, vocab):
    model = dict(cfg["model"])
    model.setdefault("dropout", cfg["train"].get("dropout", 0.1))
    mc = ModelConfig(node_classes=vocab.num_symbols,
                     edge_classes=vocab.num_edge_classes, **model)
    if getattr(args, "no_aux", False):
        mc.aux_readouts = False
    if getattr(args, "no_concat", False):
        mc.message_concat = False
    if getattr(args, "no_residual", False):
        mc.residual = False
    return mc


def _train_config(cfg, args, graph_cfg):
    train = dict(cfg["train"])
    train["n_max"] = graph_cfg.n_max
    tc = TrainConfig(**train)
    if getattr(args, "seed", None) is not None:
        tc.seed = args.seed
    return tc


def _params_from_checkpoint(path):
    header = load_checkpoint(path)
    for key in ("vocabulary", "model_config", "graph_config"):
        if header.get(key) is None:
            raise EngineError(f"{path}: checkpoint missing {key}")
    vocab = Vocabulary.from_dict(header["vocabulary"])
    model_cfg = ModelConfig.from_dict(header["model_config"])
    graph_cfg = GraphConfig.from_dict(header["graph_config"])
    params = {name: Tensor(arr, requires_grad=False)
              for name, arr in header["params"].items()}
    return params, vocab, model_cfg, graph_cfg


def _full_graphs(pairs, vocab, graph_cfg):
    """[(id, master-augmented graph, aligned labels, gold LabelGraph)] per expression."""
    out = []
    for expr, lg in pairs:
        graph = build_local_graph(expr, graph_cfg)
        aligned = align_labels(lg, graph.adjacency, vocab)
        if graph_cfg.global_graph:
            graph = augment_global(graph)
        out.append((expr.id, graph, aligned, lg))
    return out


def _outdir(args, *subdirs):
    base = Path(args.out)
    for sd in subdirs:
        (base / sd).mkdir(parents=True, exist_ok=True)
    base.mkdir(parents=True, exist_ok=True)
    return base


# ---------------------------------------------------------------------------
# commands


def _cmd_ingest(args):
    root = Path(args.data)
    if not root.is_dir():
        raise DatasetError(f"--data must be a directory of .inkml/.lg files, got {root}")
    ink_files = sorted(root.rglob("*.inkml"))
    if not ink_files:
        raise DatasetError(f"no .inkml files under {root}")
    pairs = []
    labels_seen = set()
    for ink_path in ink_files:
        lg_path = ink_path.with_suffix(".lg")
        if not lg_path.exists():
            raise DatasetError(f"missing label graph for {ink_path.name}")
        expr = parse_inkml(ink_path.read_bytes())
        lg = parse_lg(lg_path.read_text(encoding="utf-8"))
        if lg.num_strokes != len(expr.strokes):
            raise DatasetError(
                f"{ink_path.name}: {len(expr.strokes)} strokes but label graph "
                f"declares {lg.num_strokes}")
        if not expr.id:
            expr.id = ink_path.stem
        labels_seen.update(lg.node_labels)
        pairs.append((expr, lg))
    base = Vocabulary.default()
    extra = labels_seen - set(base.symbols)
    vocab = Vocabulary.from_symbols(set(base.symbols) | extra) if extra else base
    out = _outdir(args)
    write_dataset(out / DATASET_NAME, pairs, vocab)
    print(f"packed {len(pairs)} expressions -> {out / DATASET_NAME}")
    return 0


def _cmd_synth(args):
    from .synth import generate_synthetic

    cfg = _load_config(args.config)
    count = args.count if args.count is not None else cfg["data"].get("count", 20)
    max_symbols = (args.max_symbols if args.max_symbols is not None
                   else cfg["data"].get("max_symbols", 8))
    pairs = generate_synthetic(args.seed, count, max_symbols)
    out = _outdir(args)
    write_dataset(out / DATASET_NAME, pairs, Vocabulary.default())
    print(f"wrote {len(pairs)} synthetic expressions -> {out / DATASET_NAME}")
    return 0


def _cmd_build_graph(args):
    cfg = _load_config(args.config)
    graph_cfg = _graph_config(cfg, args)
    pairs, _ = _resolve_dataset(args.data)
    out = _outdir(args, "graphs")
    for expr, _lg in pairs:
        graph = build_local_graph(expr, graph_cfg)
        if graph_cfg.global_graph:
            graph = augment_global(graph)
        (out / "graphs" / f"{expr.id}.json").write_text(graph_to_json(graph),
                                                        encoding="utf-8")
    print(f"wrote {len(pairs)} graphs -> {out / 'graphs'}")
    return 0


def _cmd_train(args):
    cfg = _load_config(args.config)
    pairs, vocab = _resolve_dataset(args.data)
    graph_cfg = _graph_config(cfg, args)
    model_cfg = _model_config(cfg, args, vocab)
    train_cfg = _train_config(cfg, args, graph_cfg)

    locals_ = []
    for expr, lg in pairs:
        graph = build_local_graph(expr, graph_cfg)
        aligned = align_labels(lg, graph.adjacency, vocab)
        locals_.append((graph, aligned))

    if train_cfg.val_fraction > 0.0:
        import numpy as np
        rng = np.random.default_rng(train_cfg.seed)
        perm = rng.permutation(len(locals_))
        n_val = max(1, int(round(train_cfg.val_fraction * len(locals_))))
        val_idx = set(int(i) for i in perm[:n_val])
    else:
        val_idx = set()

    train_items = []
    val_items = []
    for k, (graph, aligned) in enumerate(locals_):
        full = augment_global(graph) if graph_cfg.global_graph else graph
        if k in val_idx:
            val_items.append((full, aligned))
        else:
            train_items.extend(split_subexpressions(graph, aligned, graph_cfg))
            if not val_idx:
                val_items.append((full, aligned))

    progress = None
    if not args.quiet:
        def progress(row):
            print(f"epoch {row['epoch']:4d}  train {row['train_loss']:.4f}  "
                  f"val {row['val_loss']:.4f}  node {row['node_acc']:.4f}  "
                  f"edge {row['edge_acc']:.4f}  lr {row['lr']:.6g}")

    result = fit(train_items, val_items, model_cfg, train_cfg,
                 graph_cfg.edge_dim, progress=progress)
    out = _outdir(args)
    (out / "history.csv").write_text(history_to_csv(result.history), encoding="utf-8")
    save_checkpoint(out / CHECKPOINT_NAME, result.best_params,
                    vocabulary=vocab.to_dict(), model_config=model_cfg.to_dict(),
                    train_config=train_cfg.to_dict(), graph_config=graph_cfg.to_dict())
    print(f"best epoch {result.best_epoch} -> {out / CHECKPOINT_NAME}")
    return 0


def _cmd_eval(args):
    params, vocab, model_cfg, graph_cfg = _params_from_checkpoint(args.checkpoint)
    pairs, _ = _resolve_dataset(args.data)
    rows = []
    dropped = 0
    for expr_id, graph, aligned, lg in _full_graphs(pairs, vocab, graph_cfg):
        res = forward(graph, params, model_cfg, train=False)
        rows.append(evaluate_expression(expr_id, res, aligned, lg, vocab))
        dropped += aligned.dropped
    report = build_report(rows, dropped_relations=dropped)
    out = _outdir(args)
    (out / "metrics.csv").write_text(report_to_csv(report), encoding="utf-8")
    agg = report.aggregate_row()
    print("  ".join(f"{k} {v:.4f}" for k, v in agg.items()))
    print(f"metrics -> {out / 'metrics.csv'}")
    return 0


def _cmd_infer(args):
    params, vocab, model_cfg, graph_cfg = _params_from_checkpoint(args.checkpoint)
    pairs, _ = _resolve_dataset(args.data)
    out = _outdir(args, "pred")
    for expr_id, graph, aligned, _lg in _full_graphs(pairs, vocab, graph_cfg):
        res = forward(graph, params, model_cfg, train=False)
        pred = decode_labels(predict_aligned(res, aligned), vocab)
        (out / "pred" / f"{expr_id}.lg").write_text(serialize_lg(pred),
                                                    encoding="utf-8")
    print(f"wrote {len(pairs)} label graphs -> {out / 'pred'}")
    return 0


def _cmd_attention(args):
    params, vocab, model_cfg, graph_cfg = _params_from_checkpoint(args.checkpoint)
    pairs, _ = _resolve_dataset(args.data)
    out = _outdir(args, "attention")
    for expr_id, graph, _aligned, _lg in _full_graphs(pairs, vocab, graph_cfg):
        matrix = export_attention(graph, params, model_cfg)
        (out / "attention" / f"{expr_id}.csv").write_text(attention_to_csv(matrix),
                                                          encoding="utf-8")
    print(f"wrote {len(pairs)} attention matrices -> {out / 'attention'}")
    return 0


def _cmd_confusion(args):
    params, vocab, model_cfg, graph_cfg = _params_from_checkpoint(args.checkpoint)
    pairs, _ = _resolve_dataset(args.data)
    graph_pairs = []
    for _expr_id, graph, aligned, lg in _full_graphs(pairs, vocab, graph_cfg):
        res = forward(graph, params, model_cfg, train=False)
        pred = decode_labels(predict_aligned(res, aligned), vocab)
        graph_pairs.append((pred, lg))
    symbols, sym_pairs = confusion_histograms(graph_pairs)
    out = _outdir(args)
    doc = {"symbols": symbols, "pairs": sym_pairs}
    (out / "confusion.json").write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"confusion tables -> {out / 'confusion.json'}")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "build-graph": _cmd_build_graph,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "attention": _cmd_attention,
    "confusion": _cmd_confusion,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        print(parser.format_usage(), end="", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (InkError, LabelError, GraphError, ModelError, TrainError,
            MetricsError, DatasetError, EngineError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
