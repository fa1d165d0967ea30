"""Command-line pipeline: synth, train, decode, eval, graph-inspect.

Every subcommand materializes its full configuration (defaults included)
into a run manifest before doing any work, alongside content hashes of its
file inputs; two runs with equal manifests produce byte-identical primary
outputs. All randomness flows from the --seed flags, never from the clock
or the OS.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import synthetic
from .corpus import (
    CorpusFormatError,
    STOP_ID,
    Vocabulary,
    build_vocabulary,
    encode_example,
    ids_to_tokens,
    load_corpus,
)
from .decoder import (
    ContentSelector,
    beam_search,
    encode_document,
    initial_state,
    make_step_fn,
    train_content_selector,
)
from .graph import build_document_graph, export_graph, graph_stats
from .metrics import evaluate_pairs
from .model import ModelConfig
from .training import (
    CheckpointError,
    TrainConfig,
    load_checkpoint,
    params_from_checkpoint,
    save_checkpoint,
    train,
)

__all__ = ["main"]


class CliError(Exception):
    """Fatal condition reported to stderr with a nonzero exit code."""


def file_hash(path: str | Path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return f"sha256:{digest}"


def write_manifest(path: Path, manifest: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit(payload: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    out = Path(args.out)
    manifest_path = Path(args.manifest) if args.manifest else Path(
        str(out) + ".manifest.json"
    )
    manifest = {
        "subcommand": "synth",
        "seed": args.seed,
        "config": {"size": args.size},
        "inputs": {},
        "outputs": {"corpus": str(out)},
    }
    write_manifest(manifest_path, manifest)
    synthetic.generate_synthetic_corpus(seed=args.seed, size=args.size,
                                        out_path=out)
    manifest["outputs"]["corpus_hash"] = file_hash(out)
    write_manifest(manifest_path, manifest)
    emit({"corpus": str(out), "documents": args.size,
          "hash": manifest["outputs"]["corpus_hash"]}, args.json)
    return 0


# ---------------------------------------------------------------------------
# train


def _model_config_from_args(args, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        d_emb=args.d_emb,
        d_h=args.d_h,
        d_g=args.d_g,
        gcn_layers=args.gcn_layers,
        d_dec=args.d_dec,
        d_attn=args.d_attn,
        ablate_gate=args.ablate_gate or args.ablate_gcn,
        ablate_gcn=args.ablate_gcn,
        use_coverage=not args.no_coverage,
        tie_fwd_bwd=args.tie_directions,
    )


def cmd_train(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = Path(args.manifest) if args.manifest else out_dir / "manifest.json"

    docs = list(load_corpus(args.corpus))
    vocab = build_vocabulary(docs, cap=args.cap)
    vocab_path = out_dir / "vocab.txt"
    vocab.save(vocab_path)
    vocab_hash = file_hash(vocab_path)

    train_config = TrainConfig(
        learning_rate=args.lr,
        init_accumulator=args.init_acc,
        coverage_weight=args.cov_weight,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        clip_norm=args.clip_norm,
    )
    model_config = _model_config_from_args(args, vocab.size)
    manifest = {
        "subcommand": "train",
        "seed": args.seed,
        "config": {
            "model": model_config.to_dict(),
            "train": vars(train_config).copy(),
            "cap": args.cap,
            "max_src_len": args.max_src_len,
            "max_tgt_len": args.max_tgt_len,
            "stop_below": args.stop_below,
            "gate_disabled": model_config.ablate_gate,
            "gcn_disabled": model_config.ablate_gcn,
        },
        "inputs": {"corpus": str(args.corpus),
                   "corpus_hash": file_hash(args.corpus)},
        "outputs": {
            "checkpoint": str(out_dir / "model.ckpt"),
            "vocab": str(vocab_path),
            "vocab_hash": vocab_hash,
            "metrics_log": str(out_dir / "metrics.log"),
        },
    }
    write_manifest(manifest_path, manifest)

    examples = [
        encode_example(d, vocab, max_source_len=args.max_src_len,
                       max_target_len=args.max_tgt_len)
        for d in docs
    ]

    log_path = out_dir / "metrics.log"
    with open(log_path, "w", encoding="utf-8") as log:
        result = train(
            examples, model_config, train_config,
            on_epoch=lambda stats: print(stats.log_line(), file=log),
            stop_below=args.stop_below,
        )

    # the content selector trains separately, on the fused encoder states
    extras = {}
    if not args.no_selector:
        states, targets = [], []
        for ex in examples:
            enc, _, _ = encode_document(ex, result.params)
            states.append(enc.fused.data.copy())
            ref = set(ex.reference_tokens)
            targets.append(
                np.array([1.0 if tok in ref else 0.0 for tok in ex.source_tokens])
            )
        selector = train_content_selector(states, targets, seed=args.seed)
        extras = {
            "selector/w": selector.w,
            "selector/b": np.array(selector.b),
            "selector/mean": selector.mean,
            "selector/std": selector.std,
        }

    ckpt_path = out_dir / "model.ckpt"
    save_checkpoint(
        ckpt_path, result.params,
        step=result.history[-1].step if result.history else 0,
        vocab_hash=vocab_hash,
        accumulators=result.accumulators,
        extras=extras,
    )
    payload = {
        "checkpoint": str(ckpt_path),
        "vocab": str(vocab_path),
        "epochs_run": len(result.history),
        "final_loss": result.final_loss,
        "halted": result.halted,
    }
    if result.halted:
        payload["halt_reason"] = result.halt_reason
    emit(payload, args.json)
    return 0


# ---------------------------------------------------------------------------
# decode


def cmd_decode(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    vocab_hash = file_hash(args.vocab)
    if vocab_hash != ckpt.vocab_hash:
        raise CliError(
            f"vocabulary hash mismatch: checkpoint expects {ckpt.vocab_hash}, "
            f"file {args.vocab} has {vocab_hash}"
        )
    vocab = Vocabulary.load(args.vocab)
    config = ckpt.config
    if args.no_coverage:
        config.use_coverage = False
    params = params_from_checkpoint(ckpt)

    selector = None
    if args.bottom_up_threshold is not None:
        if "selector/w" not in ckpt.extras:
            raise CliError(
                "checkpoint carries no content selector; retrain without "
                "--no-selector to use --bottom-up-threshold"
            )
        selector = ContentSelector(
            w=ckpt.extras["selector/w"],
            b=float(ckpt.extras["selector/b"]),
            mean=ckpt.extras["selector/mean"],
            std=ckpt.extras["selector/std"],
        )
    elif args.bottom_up_damp:
        raise CliError("--bottom-up-damp requires --bottom-up-threshold")

    out = Path(args.out)
    manifest_path = Path(args.manifest) if args.manifest else Path(
        str(out) + ".manifest.json"
    )
    manifest = {
        "subcommand": "decode",
        "seed": 0,
        "config": {
            "beam": args.beam,
            "max_dec_len": args.max_dec_len,
            "len_penalty": args.len_penalty,
            "bottom_up_threshold": args.bottom_up_threshold,
            "bottom_up_damp": args.bottom_up_damp,
            "no_coverage": args.no_coverage,
            "model": config.to_dict(),
        },
        "inputs": {
            "checkpoint": str(args.checkpoint),
            "checkpoint_hash": file_hash(args.checkpoint),
            "corpus": str(args.corpus),
            "corpus_hash": file_hash(args.corpus),
            "vocab": str(args.vocab),
            "vocab_hash": vocab_hash,
        },
        "outputs": {"summaries": str(out)},
    }
    write_manifest(manifest_path, manifest)

    gates_fh = open(args.dump_gates, "w", encoding="utf-8") if args.dump_gates \
        else None
    try:
        with open(out, "w", encoding="utf-8") as fh:
            for index, doc in enumerate(load_corpus(args.corpus)):
                example = encode_example(doc, vocab)
                enc, gated, ctx = encode_document(example, params)
                mask = None
                if selector is not None:
                    mask = selector.predict(enc.fused.data,
                                            args.bottom_up_threshold)
                    mask.damp = args.bottom_up_damp
                state = initial_state(enc, params)
                hyp = beam_search(
                    make_step_fn(ctx, params, mask=mask), state,
                    beam=args.beam, max_len=args.max_dec_len,
                    alpha=args.len_penalty,
                )
                out_ids = [t for t in hyp.tokens if t != STOP_ID]
                tokens = ids_to_tokens(out_ids, vocab, example.oov_tokens)
                fh.write(" ".join(tokens) + "\n")
                if gates_fh is not None:
                    record = {
                        "index": index,
                        "attention": None if gated.attention is None
                        else [round(float(v), 8) for v in gated.attention.data],
                        "gate_mean": None if gated.gate is None
                        else [round(float(v), 8)
                              for v in gated.gate.data.mean(axis=1)],
                    }
                    gates_fh.write(json.dumps(record) + "\n")
    finally:
        if gates_fh is not None:
            gates_fh.close()
    emit({"summaries": str(out), "hash": file_hash(out)}, args.json)
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    candidates = []
    with open(args.candidates, encoding="utf-8") as fh:
        for line in fh:
            candidates.append(line.strip().split() if line.strip() else [])
    references = [doc.reference for doc in load_corpus(args.references)]
    if len(candidates) != len(references):
        raise CliError(
            f"candidate/reference count mismatch: {len(candidates)} candidates "
            f"vs {len(references)} references"
        )
    manifest_path = Path(args.manifest) if args.manifest else Path(
        str(args.candidates) + ".eval-manifest.json"
    )
    write_manifest(manifest_path, {
        "subcommand": "eval",
        "seed": args.seed,
        "config": {"resamples": args.resamples},
        "inputs": {
            "candidates": str(args.candidates),
            "candidates_hash": file_hash(args.candidates),
            "references": str(args.references),
            "references_hash": file_hash(args.references),
        },
        "outputs": {},
    })
    report = evaluate_pairs(candidates, references,
                            n_resamples=args.resamples, seed=args.seed)
    if args.json:
        print(json.dumps(report.to_dict(), sort_keys=True))
    else:
        print(report.format_text())
    return 0


# ---------------------------------------------------------------------------
# graph-inspect


def cmd_graph_inspect(args) -> int:
    docs = list(load_corpus(args.corpus))
    if not 0 <= args.index < len(docs):
        raise CliError(
            f"document index {args.index} out of range for corpus of "
            f"{len(docs)} documents"
        )
    manifest_path = Path(args.manifest) if args.manifest else Path(
        str(args.corpus) + ".graph-manifest.json"
    )
    write_manifest(manifest_path, {
        "subcommand": "graph-inspect",
        "seed": 0,
        "config": {"index": args.index, "export": args.export},
        "inputs": {"corpus": str(args.corpus),
                   "corpus_hash": file_hash(args.corpus)},
        "outputs": {"export": args.export},
    })
    graph = build_document_graph(docs[args.index])
    stats = graph_stats(graph)
    if args.export:
        with open(args.export, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(export_graph(graph), sort_keys=True) + "\n")
    if args.json:
        print(json.dumps(stats, sort_keys=True))
    else:
        print(f"nodes: {stats['nodes']}")
        print("edges: " + ", ".join(f"{k}={v}" for k, v in stats["edges"].items()))
        print(f"max_in_degree: {stats['max_in_degree']}")
        print("root chain: " + " -> ".join(str(r) for r in stats["roots"]))
        print("labels: " + ", ".join(f"{k}={v}" for k, v in stats["labels"].items()))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synsum",
        description="Syntax-aware abstractive summarizer, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=int, default=50_000,
                   help="vocabulary size cap including reserved ids")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=0.15)
    p.add_argument("--init-acc", type=float, default=0.1)
    p.add_argument("--cov-weight", type=float, default=1.0)
    p.add_argument("--clip-norm", type=float, default=2.0)
    p.add_argument("--d-emb", type=int, default=25)
    p.add_argument("--d-h", type=int, default=32)
    p.add_argument("--d-g", type=int, default=64)
    p.add_argument("--gcn-layers", type=int, default=2)
    p.add_argument("--d-dec", type=int, default=64)
    p.add_argument("--d-attn", type=int, default=64)
    p.add_argument("--max-src-len", type=int, default=400)
    p.add_argument("--max-tgt-len", type=int, default=100)
    p.add_argument("--stop-below", type=float, default=None,
                   help="stop once epoch-mean loss falls below this value")
    p.add_argument("--ablate-gate", action="store_true",
                   help="bypass the selective gate")
    p.add_argument("--ablate-gcn", action="store_true",
                   help="drop graph convolutions and the gate")
    p.add_argument("--tie-directions", action="store_true",
                   help="share one weight matrix across dependency directions")
    p.add_argument("--no-coverage", action="store_true")
    p.add_argument("--no-selector", action="store_true",
                   help="skip content-selector training")
    p.add_argument("--manifest")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("decode", help="decode summaries with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--max-dec-len", type=int, default=30)
    p.add_argument("--len-penalty", type=float, default=0.4)
    p.add_argument("--bottom-up-threshold", type=float, default=None)
    p.add_argument("--bottom-up-damp", action="store_true",
                   help="reweight copy attention by selector scores instead "
                        "of hard masking")
    p.add_argument("--no-coverage", action="store_true")
    p.add_argument("--dump-gates",
                   help="write per-token pooling attention and mean gate")
    p.add_argument("--manifest")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("eval", help="score candidate summaries with ROUGE")
    p.add_argument("--candidates", required=True)
    p.add_argument("--references", required=True,
                   help="reference corpus in jsonl format")
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("graph-inspect", help="print document-graph statistics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--export", help="write the edge list as a JSON record")
    p.add_argument("--manifest")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_graph_inspect)

    return parser


def validate_args(parser: argparse.ArgumentParser, args) -> None:
    if args.command == "synth" and args.size < 1:
        parser.error("--size must be >= 1")
    if args.command == "train":
        if args.ablate_gate and args.ablate_gcn:
            parser.error(
                "--ablate-gate is redundant with --ablate-gcn; pass only one"
            )
        if args.cap <= 4:
            parser.error("--cap must exceed the 4 reserved ids")
    if args.command == "decode" and args.beam < 1:
        parser.error("--beam must be >= 1")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    validate_args(parser, args)
    try:
        return args.fn(args)
    except (CliError, CorpusFormatError, CheckpointError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
