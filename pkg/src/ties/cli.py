"""Command-line entry point for the full pipeline.

Subcommands: train-graph, train, infer, protocol, synth, project. Every
subcommand is deterministic given --seed, reads/writes the TSV formats of the
library modules, and renders a matplotlib figure next to report-style
outputs. Flags can also be supplied through ``--config FILE`` (key=value
lines, '#' comments); explicit flags win.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ties import data_io, figures, graph_embed, train_eval
from ties.errors import ConfigError, TiesError
from ties.model import (
    ActionVocab,
    FeatureSpec,
    ModelConfig,
    assemble_features,
    build_examples,
    encode,
    load_model,
    model_init,
    save_model,
)


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _read_config_file(path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"{path}: line {lineno}: expected 'key=value'")
            pairs[key.strip()] = value.strip()
    return pairs


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Apply --config key=value pairs as parser defaults; flags override them."""
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return
    actions = {a.dest: a for a in parser._actions
               if a.dest not in ("help", "config")}
    for key, value in _read_config_file(path).items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise ConfigError(f"unknown config key {key!r} for this subcommand")
        action = actions[dest]
        if action.type is not None:
            value = action.type(value)
        if action.choices is not None and value not in action.choices:
            raise ConfigError(
                f"config key {key!r}: {value!r} not in {tuple(action.choices)}")
        parser.set_defaults(**{dest: value})


def _pos_weight(text: str):
    if text == train_eval.AUTO:
        return text
    return float(text)


def _fractions(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return (parts[0], parts[1], parts[2])


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None,
                     help="key=value file providing defaults for any flag")
    sub.add_argument("--seed", type=int, default=0, help="master RNG seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ties",
        description="Temporal interaction embeddings: graph pre-training, "
                    "sequence classification, and the evaluation protocol.")
    subs = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = subs.add_parser("train-graph", formatter_class=fmt,
                        help="train graph embeddings from an edge list")
    p.add_argument("edges", help="edge list TSV: source<TAB>relation<TAB>dest")
    p.add_argument("--dim", type=int, default=64, help="embedding dimension")
    p.add_argument("--margin", type=float, default=0.5, help="ranking margin")
    p.add_argument("--lr", type=float, default=0.1, help="SGD learning rate")
    p.add_argument("--epochs", type=int, default=20, help="training epochs")
    p.add_argument("--batch-size", type=int, default=16, help="mini-batch size")
    p.add_argument("--negatives", type=int, default=2,
                   help="corrupted edges sampled per true edge")
    p.add_argument("--out", required=True, help="embedding TSV output path")
    _add_common(p)
    p.set_defaults(func=cmd_train_graph)

    p = subs.add_parser("train", formatter_class=fmt,
                        help="train a sequence classifier")
    p.add_argument("--interactions", required=True, help="interaction log TSV")
    p.add_argument("--labels", required=True, help="labels TSV")
    p.add_argument("--src-emb", default=None, help="frozen source embedding TSV")
    p.add_argument("--tgt-emb", default=None, help="frozen target embedding TSV")
    p.add_argument("--encoder", choices=("rnn", "cnn", "deepset"),
                   default="deepset", help="sequence encoder kind")
    p.add_argument("--hidden", type=int, default=64, help="hidden dimension")
    p.add_argument("--max-len", type=int, default=512,
                   help="sequence length; longer logs keep the newest steps")
    p.add_argument("--lr", type=float, default=0.0005, help="Adam learning rate")
    p.add_argument("--clip", type=float, default=1.0, help="global gradient-norm clip")
    p.add_argument("--dropout", type=float, default=0.1, help="dropout probability")
    p.add_argument("--epochs", type=int, default=10, help="training epochs")
    p.add_argument("--batch-size", type=int, default=32, help="mini-batch size")
    p.add_argument("--action-dim", type=int, default=64,
                   help="trainable action embedding width")
    p.add_argument("--pooling", choices=("mean", "max", "sum"), default="mean",
                   help="pooling over attended steps")
    p.add_argument("--cnn-layers", type=int, default=2, help="conv layers (cnn encoder)")
    p.add_argument("--cnn-width", type=int, default=5, help="conv window width")
    p.add_argument("--rnn-layers", type=int, default=1,
                   help="bidirectional LSTM layers (rnn encoder)")
    p.add_argument("--pos-weight", type=_pos_weight, default=train_eval.AUTO,
                   help="positive-class loss weight, or 'auto' for #neg/#pos")
    p.add_argument("--warm-start", default=None,
                   help="checkpoint to initialize parameters from")
    p.add_argument("--out", required=True, help="checkpoint directory")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("infer", formatter_class=fmt,
                        help="score interaction sequences with a checkpoint")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--interactions", required=True)
    p.add_argument("--out", required=True, help="score TSV output")
    p.add_argument("--emit-embeddings", default=None,
                   help="also write per-source embedding vectors to this TSV")
    _add_common(p)
    p.set_defaults(func=cmd_infer)

    p = subs.add_parser("protocol", formatter_class=fmt,
                        help="run the multi-split evaluation protocol")
    p.add_argument("--interactions", required=True, help="interaction log TSV")
    p.add_argument("--labels", required=True, help="labels TSV")
    p.add_argument("--baseline-scores", required=True,
                   help="external baseline score TSV: source_id<TAB>score")
    p.add_argument("--splits", type=int, default=5, help="train/test resamplings")
    p.add_argument("--encoders", default="all",
                   help="'all' or comma-separated subset of rnn,cnn,deepset")
    p.add_argument("--src-emb", default=None, help="frozen source embedding TSV")
    p.add_argument("--tgt-emb", default=None, help="frozen target embedding TSV")
    p.add_argument("--hidden", type=int, default=64, help="hidden dimension")
    p.add_argument("--max-len", type=int, default=512, help="sequence length")
    p.add_argument("--lr", type=float, default=0.0005, help="Adam learning rate")
    p.add_argument("--clip", type=float, default=1.0, help="global gradient-norm clip")
    p.add_argument("--dropout", type=float, default=0.1, help="dropout probability")
    p.add_argument("--epochs", type=int, default=10, help="training epochs per variant")
    p.add_argument("--batch-size", type=int, default=32, help="mini-batch size")
    p.add_argument("--action-dim", type=int, default=64,
                   help="trainable action embedding width")
    p.add_argument("--fractions", type=_fractions, default=(0.8, 0.1, 0.1),
                   help="train-1,train-2,test fractions")
    p.add_argument("--out-report", required=True,
                   help="report path; .json and .png siblings are written too")
    _add_common(p)
    p.set_defaults(func=cmd_protocol)

    p = subs.add_parser("synth", formatter_class=fmt,
                        help="generate a synthetic labeled population")
    p.add_argument("--normal", type=int, required=True, help="normal source count")
    p.add_argument("--bad", type=int, required=True, help="bad source count")
    p.add_argument("--actions", type=int, default=12, help="action vocabulary size")
    p.add_argument("--mean-seq-len", type=int, default=30, help="mean interactions per source")
    p.add_argument("--burst", type=float, default=10.0,
                   help="time-gap compression factor for bad sources")
    p.add_argument("--bad-target-pool", type=int, default=20,
                   help="shared targets available to bad sources")
    p.add_argument("--normal-target-pool", type=int, default=500,
                   help="targets available to normal sources")
    p.add_argument("--embed-dim", type=int, default=16, help="entity embedding width")
    p.add_argument("--overlap", type=float, default=0.5,
                   help="embedding cluster overlap in [0, 1]; 0 = well separated")
    p.add_argument("--out-dir", required=True, help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("project", formatter_class=fmt,
                        help="project embeddings to 2-D and plot them")
    p.add_argument("--embeddings", required=True, help="embedding TSV (with #dim header)")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="projected point TSV; .png sibling too")
    _add_common(p)
    p.set_defaults(func=cmd_project)

    return parser


# ---------------------------------------------------------------------------
# subcommands


def cmd_train_graph(args) -> int:
    edges = graph_embed.read_edges(args.edges)
    graph = graph_embed.MultiRelationGraph.from_edges(edges)
    cfg = graph_embed.NegativeSampleConfig(negatives_per_edge=args.negatives,
                                           rng_seed=args.seed)
    loss_curve: list[float] = []
    emb = graph_embed.train_graph(graph, args.dim, args.margin, args.lr,
                                  args.epochs, args.batch_size, cfg,
                                  loss_curve=loss_curve)
    graph_embed.export_embeddings(emb, args.out)
    if loss_curve:
        final_loss = loss_curve[-1]
    else:
        final_loss = graph_embed.mean_margin_loss(emb, graph, args.margin, cfg)
    print(f"final mean margin loss: {final_loss:.6f}")
    print(f"wrote {args.out} ({len(graph.nodes)} nodes, dim {args.dim})")
    return 0


def _load_optional_table(path):
    return None if path is None else graph_embed.read_embedding_table(path)


def _parse_and_build(interactions_path, labels_path):
    parsed = data_io.parse_interactions(interactions_path)
    if parsed.issues:
        _warn(f"{len(parsed.issues)} malformed interaction lines skipped "
              f"(first: line {parsed.issues[0][0]}: {parsed.issues[0][1]})")
    dataset = data_io.build_dataset(parsed.records, labels_path)
    if dataset.dropped_unlabeled_sources:
        _warn(f"dropped {dataset.dropped_unlabeled_sources} unlabeled sources "
              f"({dataset.dropped_unlabeled_records} records)")
    if dataset.dropped_labels_without_records:
        _warn(f"dropped {dataset.dropped_labels_without_records} labels with no records")
    return dataset


def cmd_train(args) -> int:
    dataset = _parse_and_build(args.interactions, args.labels)
    src_table = _load_optional_table(args.src_emb)
    tgt_table = _load_optional_table(args.tgt_emb)
    vocab = ActionVocab.build(
        rec.action for seq in dataset.sequences.values() for rec in seq)
    feature = FeatureSpec(
        d_src=src_table.dim if src_table is not None else 0,
        d_tgt=tgt_table.dim if tgt_table is not None else 0,
        d_act=args.action_dim)
    config = ModelConfig(encoder=args.encoder, feature=feature,
                         actions=tuple(vocab.names), hidden=args.hidden,
                         pooling=args.pooling, max_len=args.max_len,
                         cnn_layers=args.cnn_layers, cnn_width=args.cnn_width,
                         rnn_layers=args.rnn_layers)
    model = model_init(config, args.seed)
    model.attach_tables(src_table, tgt_table)
    examples = build_examples(dataset.sequences, dataset.labels, model)
    unknown = sum(ex.unknown_entity_count for ex in examples)
    if unknown:
        _warn(f"{unknown} unknown entity ids fell back to zero embeddings")
    cfg = train_eval.TrainConfig(
        lr=args.lr, clip=args.clip, dropout_p=args.dropout, epochs=args.epochs,
        batch_size=args.batch_size, seed=args.seed,
        warm_start_path=args.warm_start, pos_weight=args.pos_weight)
    result = train_eval.train(model, examples, cfg, track_prauc=True)
    for epoch, (loss, prauc) in enumerate(zip(result.losses, result.train_prauc), 1):
        print(f"epoch {epoch}: loss {loss:.6f} train-prauc {prauc:.4f}")
    save_model(model, args.out)
    figures.render_loss_curve(result.losses, Path(args.out) / "loss.png")
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_infer(args) -> int:
    model = load_model(args.model)
    parsed = data_io.parse_interactions(args.interactions)
    if parsed.issues:
        _warn(f"{len(parsed.issues)} malformed interaction lines skipped")
    groups = data_io.group_records(parsed.records)
    examples = build_examples(groups, None, model)
    unknown = sum(ex.unknown_entity_count for ex in examples)
    if unknown:
        _warn(f"{unknown} unknown entity ids fell back to zero embeddings")
    outputs = [(ex.source_id, encode(model, ex)) for ex in examples]
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for sid, out in outputs:
            fh.write(f"{sid}\t{out.score:.17g}\n")
    if args.emit_embeddings:
        table = graph_embed.EmbeddingTable(
            [sid for sid, _ in outputs],
            np.vstack([out.embedding for _, out in outputs]))
        graph_embed.write_embedding_table(table, args.emit_embeddings)
    print(f"scored {len(outputs)} sources -> {args.out}")
    return 0


def cmd_protocol(args) -> int:
    dataset = _parse_and_build(args.interactions, args.labels)
    baseline = train_eval.read_baseline_scores(args.baseline_scores)
    src_table = _load_optional_table(args.src_emb)
    tgt_table = _load_optional_table(args.tgt_emb)
    vocab = ActionVocab.build(
        rec.action for seq in dataset.sequences.values() for rec in seq)
    feature = FeatureSpec(
        d_src=src_table.dim if src_table is not None else 0,
        d_tgt=tgt_table.dim if tgt_table is not None else 0,
        d_act=args.action_dim)
    placeholder = np.zeros((len(vocab), feature.d_act))
    examples = [
        assemble_features(dataset.sequences[sid], feature, vocab, src_table,
                          tgt_table, placeholder, args.max_len,
                          label=dataset.labels[sid])
        for sid in sorted(dataset.sequences)
    ]
    if args.encoders == "all":
        kinds = list(train_eval._CANONICAL_KIND_ORDER)
    else:
        kinds = [k.strip() for k in args.encoders.split(",") if k.strip()]
    base_config = ModelConfig(encoder="cnn", feature=feature,
                              actions=tuple(vocab.names), hidden=args.hidden,
                              max_len=args.max_len)
    train_cfg = train_eval.TrainConfig(
        lr=args.lr, clip=args.clip, dropout_p=args.dropout,
        epochs=args.epochs, batch_size=args.batch_size)
    reports = train_eval.run_protocol(
        examples, baseline, kinds, args.splits, base_config, train_cfg,
        fractions=args.fractions, master_seed=args.seed)
    table = train_eval.format_report_table(reports)
    print(table, end="")
    out = Path(args.out_report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table, encoding="utf-8")
    out.with_suffix(".json").write_text(train_eval.report_to_json(reports),
                                        encoding="utf-8")
    figures.render_report_figure(reports, out.with_suffix(".png"))
    print(f"wrote {out}, {out.with_suffix('.json')}, {out.with_suffix('.png')}")
    return 0


def cmd_synth(args) -> int:
    cfg = data_io.SynthConfig(
        n_normal=args.normal, n_bad=args.bad, action_count=args.actions,
        mean_seq_len=args.mean_seq_len, bad_burst_factor=args.burst,
        bad_target_pool=args.bad_target_pool, seed=args.seed,
        normal_target_pool=args.normal_target_pool, embed_dim=args.embed_dim,
        cluster_overlap=args.overlap)
    dataset, embeddings = data_io.generate_synthetic(cfg)
    interactions_path, labels_path = data_io.write_dataset_files(dataset, args.out_dir)
    emb_path = Path(args.out_dir) / "embeddings.tsv"
    graph_embed.export_embeddings(embeddings, emb_path)
    print(f"wrote {interactions_path} ({dataset.record_count()} records), "
          f"{labels_path} ({len(dataset.labels)} sources), {emb_path}")
    return 0


def cmd_project(args) -> int:
    table = graph_embed.read_embedding_table(args.embeddings)
    labels = data_io.read_labels(args.labels)
    vectors = {eid: vec for eid, vec in table.items()}
    coords = data_io.export_pca_projection(vectors, labels, args.out)
    label_list = [labels[eid] for eid in vectors]
    figures.render_projection_figure(coords, label_list, Path(args.out).with_suffix(".png"))
    print(f"projected {len(coords)} points -> {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if argv and not argv[0].startswith("-"):
        # apply --config defaults to the chosen subparser before parsing
        sub_actions = [a for a in parser._actions
                       if isinstance(a, argparse._SubParsersAction)]
        sub = sub_actions[0].choices.get(argv[0]) if sub_actions else None
        if sub is not None:
            try:
                _apply_config_file(sub, argv[1:])
            except (TiesError, OSError, ValueError) as exc:
                return _fail(str(exc))
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TiesError, OSError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
