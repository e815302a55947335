"""Command-line entry point wiring the whole pipeline.

Subcommands: build-kb, train-transe, spot, train, eval, query, gradcheck,
ablate, make-synth. Every run echoes its resolved configuration to stderr,
keeps stdout for the actual report (plain text, JSON lines, or --json), and
exits 0 only on success. All randomness hangs off --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .embedding import (EmbeddingTable, TransEConfig, load_embeddings,
                        make_bow_table, save_embeddings, train_transe)
from .kb import (KnowledgeGraph, Triple, build_graph, canonicalize_relation,
                 dedup_triples, extract_triples_from_qa, filter_by_frequency,
                 lemmatize, load_kb, load_qa_pairs, make_triple, save_kb)
from .model import (MODES, ModelDims, ModelParams, forward, load_checkpoint,
                    predict, save_checkpoint, slot_features)
from .spotting import (expand_neighborhood, match_entries, select_slots,
                       spot_triples)
from .training import (EvalReport, TrainConfig, evaluate, format_report_table,
                       gradient_check, load_dataset, make_synthetic_task,
                       save_dataset, train)

CLI_MODES = ("full", "bow", "blind", "q-only", "no-replication")
GRADCHECK_TOL = 1e-4
# epochs for the table derived in-process when --embeddings is omitted
DERIVED_TRANSE_EPOCHS = 200


def _internal_mode(cli_mode: str) -> str:
    return cli_mode.replace("-", "_")


def _echo_config(args: argparse.Namespace) -> None:
    items = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("config: " + " ".join(f"{k}={v}" for k, v in items.items()),
          file=sys.stderr)


def _derive_table(graph: KnowledgeGraph, d_e: int, seed: int,
                  mode: str) -> EmbeddingTable:
    if mode == "bow":
        return make_bow_table(graph, d_e, seed)
    return train_transe(graph, TransEConfig(
        dim=d_e, epochs=DERIVED_TRANSE_EPOCHS, seed=seed))


def _load_table(args: argparse.Namespace, graph: Optional[KnowledgeGraph],
                d_e: int, mode: str) -> Optional[EmbeddingTable]:
    if mode == "q_only":
        return None
    if graph is None:
        raise ValueError("--kb is required for any mode that uses memory")
    if args.embeddings:
        kind = "bow" if mode == "bow" else "transe"
        return load_embeddings(args.embeddings, graph, kind=kind)
    return _derive_table(graph, d_e, args.seed, mode)


# --- subcommands -----------------------------------------------------------

def cmd_build_kb(args: argparse.Namespace) -> int:
    if not args.qa and not args.triples:
        raise ValueError("need at least one input: --qa and/or --triples")
    file_triples: List[Triple] = []
    if args.triples:
        file_triples = [make_triple(*t.phrases())
                        for t in load_kb(args.triples).triples]
    extracted: List[Triple] = []
    n_pairs = 0
    if args.qa:
        pairs = load_qa_pairs(args.qa)
        n_pairs = len(pairs)
        for tokens, answer in pairs:
            extracted.extend(extract_triples_from_qa(tokens, answer))
    relation_set = {t.relation for t in file_triples}
    if relation_set:
        extracted = [Triple(t.subject,
                            canonicalize_relation(t.relation, relation_set),
                            t.target)
                     for t in extracted]
    merged = file_triples + extracted
    deduped = dedup_triples(merged)
    kept = filter_by_frequency(merged, args.min_count)
    graph = build_graph(kept)
    save_kb(graph, args.out)
    stats = {
        "qa_pairs": n_pairs,
        "extracted": len(extracted),
        "ingested": len(file_triples),
        "merged": len(merged),
        "deduplicated": len(deduped),
        "kept": len(kept),
        "entities": len(graph.entities),
        "relations": len(graph.relations),
    }
    if args.json:
        print(json.dumps(stats, sort_keys=True))
    else:
        for k, v in stats.items():
            print(f"{k}: {v}")
    return 0


def cmd_train_transe(args: argparse.Namespace) -> int:
    graph = load_kb(args.kb)
    config = TransEConfig(dim=args.dim, margin=args.margin, lr=args.lr,
                          epochs=args.epochs,
                          negatives_per_positive=args.negatives,
                          seed=args.seed)
    table = train_transe(graph, config)
    save_embeddings(table, args.out)
    summary = {
        "entities": len(table.entity_vectors),
        "relations": len(table.relation_vectors),
        "dim": table.dim,
        "epochs": config.epochs,
        "final_loss": table.history.epoch_loss[-1] if table.history.epoch_loss else None,
        "out": args.out,
    }
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        for k, v in summary.items():
            print(f"{k}: {v}")
    return 0


def _iter_question_lines(path: Optional[str]):
    if path:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    yield [str(t) for t in obj["question"]]
                except (json.JSONDecodeError, KeyError, TypeError) as e:
                    raise ValueError(f"{path}:{lineno}: malformed question ({e})") from e
    else:
        for line in sys.stdin:
            if not line.strip():
                break
            yield line.split()


def cmd_spot(args: argparse.Namespace) -> int:
    graph = load_kb(args.kb)
    entry_set = graph.entry_set()
    for raw_tokens in _iter_question_lines(args.dataset):
        tokens = [lemmatize(t) for t in raw_tokens]
        matched = match_entries(tokens, entry_set)
        spotted = expand_neighborhood(spot_triples(matched, graph), graph)
        assignment = select_slots(spotted, graph, args.slots)
        print(json.dumps({
            "matched": sorted(matched),
            "core": spotted.core,
            "expanded": spotted.expanded,
            "slots": assignment.slots,
            "mask": assignment.mask,
        }, sort_keys=True))
    return 0


def _model_dims(args: argparse.Namespace, feature_dim: int) -> ModelDims:
    d = args.dim if args.dim else feature_dim
    d_j = args.joint_dim if args.joint_dim else d
    return ModelDims(d=d, d_j=d_j, d_e=args.knowledge_dim,
                     d_w=args.word_dim, m_slots=args.slots,
                     k_answers=args.answers)


def cmd_train(args: argparse.Namespace) -> int:
    mode = _internal_mode(args.mode)
    examples = load_dataset(args.dataset)
    if not examples:
        raise ValueError(f"{args.dataset}: no examples")
    dims = _model_dims(args, len(examples[0].visual_feature))
    graph = load_kb(args.kb) if args.kb else None
    if mode != "q_only" and graph is None:
        raise ValueError("--kb is required for any mode that uses memory")
    table = _load_table(args, graph, dims.d_e, mode)
    config = TrainConfig(lr=args.lr, epochs=args.epochs, seed=args.seed,
                         mode=mode, dims=dims)
    params, curve = train(examples, graph, table, config)
    save_checkpoint(params, args.checkpoint)
    summary = {
        "examples": len(examples),
        "vocab": len(params.vocab),
        "answers": len(params.answer_vocab),
        "epochs": config.epochs,
        "first_loss": curve[0],
        "final_loss": curve[-1],
        "checkpoint": args.checkpoint,
    }
    if args.json:
        summary["loss_curve"] = curve
        print(json.dumps(summary, sort_keys=True))
    else:
        for k, v in summary.items():
            print(f"{k}: {v}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    mode = _internal_mode(args.mode)
    params = load_checkpoint(args.checkpoint)
    examples = load_dataset(args.dataset)
    graph = load_kb(args.kb) if args.kb else None
    if mode != "q_only" and graph is None:
        raise ValueError("--kb is required for any mode that uses memory")
    table = _load_table(args, graph, params.dims.d_e, mode)
    report = evaluate(examples, params, graph, table, mode,
                      threads=args.threads)
    if args.json:
        print(json.dumps(report.to_json(), sort_keys=True))
    else:
        print(format_report_table([(args.mode, report)]))
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    mode = _internal_mode(args.mode)
    params = load_checkpoint(args.checkpoint)
    with open(args.feature, "r", encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, list):
        raise ValueError(f"{args.feature}: expected a JSON array of reals")
    u = np.array([float(v) for v in raw], dtype=np.float64)
    if mode not in ("blind",) and u.shape != (params.dims.d,):
        raise ValueError(
            f"{args.feature}: feature length {u.shape[0]}, model wants {params.dims.d}")
    graph = load_kb(args.kb) if args.kb else None
    if mode != "q_only" and graph is None:
        raise ValueError("--kb is required for any mode that uses memory")
    table = _load_table(args, graph, params.dims.d_e, mode)

    for line in sys.stdin:
        if not line.strip():
            break
        tokens = [lemmatize(t) for t in line.split()]
        feats = None
        assignment = None
        if mode != "q_only":
            matched = match_entries(tokens, graph.entry_set())
            spotted = expand_neighborhood(spot_triples(matched, graph), graph)
            assignment = select_slots(spotted, graph, params.dims.m_slots)
            feats = slot_features(assignment, table, graph)
        trace = forward(tokens, u, params, mode, feats)
        idx, _ = predict(trace.q_prime, params.matrices["W_o"])
        print(f"answer: {params.answer_vocab[idx]}")
        if not trace.blocks:
            print("no supporting facts")
            continue
        for blk in trace.blocks:
            print(f"block {blk.kind}:")
            order = np.argsort(-blk.p)[:5]
            for slot in order:
                if not assignment.mask[slot]:
                    continue
                triple = graph.triples[assignment.slots[slot]]
                print(f"  {blk.p[slot]:.4f}  {triple}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    dims = ModelDims(d=8, d_j=6, d_e=5, d_w=4, m_slots=4, k_answers=3)
    modes = [_internal_mode(args.mode)] if args.mode else [ _internal_mode(m) for m in CLI_MODES]
    results: Dict[str, float] = {}
    for mode in modes:
        worst = 0.0
        for s in range(args.seeds):
            config = TrainConfig(mode=mode, dims=dims)
            worst = max(worst, gradient_check(config, seed=args.seed + s))
        results[mode] = worst
    overall = max(results.values())
    ok = overall <= GRADCHECK_TOL
    if args.json:
        print(json.dumps({"per_mode": results, "max": overall,
                          "tolerance": GRADCHECK_TOL, "pass": ok},
                         sort_keys=True))
    else:
        for mode, err in results.items():
            print(f"{mode}: max rel err {err:.3e}")
        print(f"max rel err {overall:.3e} (tol {GRADCHECK_TOL:.0e}) "
              f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_ablate(args: argparse.Namespace) -> int:
    if args.dataset or args.kb:
        if not (args.dataset and args.test and args.kb):
            raise ValueError("ablate needs --dataset, --test and --kb together "
                             "(or none of them for the built-in synthetic task)")
        train_set = load_dataset(args.dataset)
        test_set = load_dataset(args.test)
        graph = load_kb(args.kb)
    else:
        task = make_synthetic_task(seed=args.seed, dim=args.dim or 32)
        train_set, test_set, graph = task.train, task.test, task.graph

    feature_dim = len(train_set[0].visual_feature)
    dims = _model_dims(args, feature_dim)
    transe_table = _derive_table(graph, dims.d_e, args.seed, "full") \
        if not args.embeddings else load_embeddings(args.embeddings, graph)
    bow_table = make_bow_table(graph, dims.d_e, args.seed)

    rows = []
    report_json = {}
    for cli_mode in CLI_MODES:
        mode = _internal_mode(cli_mode)
        table = None if mode == "q_only" else (
            bow_table if mode == "bow" else transe_table)
        config = TrainConfig(lr=args.lr, epochs=args.epochs, seed=args.seed,
                             mode=mode, dims=dims)
        params, curve = train(train_set, graph, table, config)
        report = evaluate(test_set, params, graph, table, mode,
                          threads=args.threads, loss_curve=curve)
        rows.append((cli_mode, report))
        report_json[cli_mode] = report.to_json()
    if args.json:
        print(json.dumps(report_json, sort_keys=True))
    else:
        print(format_report_table(rows))
    return 0


def cmd_make_synth(args: argparse.Namespace) -> int:
    task = make_synthetic_task(seed=args.seed, n_entities=args.entities,
                               n_relations=args.relations,
                               dim=args.dim or 32, n_triples=args.triples)
    os.makedirs(args.out, exist_ok=True)
    kb_path = os.path.join(args.out, "kb.tsv")
    train_path = os.path.join(args.out, "train.jsonl")
    test_path = os.path.join(args.out, "test.jsonl")
    pairs_path = os.path.join(args.out, "pairs.json")
    save_kb(task.graph, kb_path)
    save_dataset(task.train, train_path)
    save_dataset(task.test, test_path)
    with open(pairs_path, "w", encoding="utf-8", newline="\n") as f:
        json.dump({"pairs": [list(p) for p in task.pair_indices]}, f)
        f.write("\n")
    summary = {
        "kb": kb_path, "train": train_path, "test": test_path,
        "pairs": pairs_path, "triples": len(task.graph),
        "train_examples": len(task.train), "test_examples": len(task.test),
        "confusable_pairs": len(task.pair_indices),
    }
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        for k, v in summary.items():
            print(f"{k}: {v}")
    return 0


# --- parser ------------------------------------------------------------------

def _add_model_dim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, default=0,
                   help="query/visual dim d (default: feature length)")
    p.add_argument("--joint-dim", type=int, default=0,
                   help="joint embedding dim (default: same as --dim)")
    p.add_argument("--knowledge-dim", type=int, default=32,
                   help="knowledge embedding dim d_e")
    p.add_argument("--word-dim", type=int, default=32, help="word vector dim")
    p.add_argument("--slots", type=int, default=8, help="memory slots M")
    p.add_argument("--answers", type=int, default=50,
                   help="answer vocabulary cap K")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vkmn",
        description="Key-value memory network VQA over a triple knowledge base")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("build-kb", help="extract, canonicalize, filter, save a KB")
    p.add_argument("--qa", help="QA-pair JSONL to extract triples from")
    p.add_argument("--triples", help="triple TSV to ingest")
    p.add_argument("--out", required=True, help="output KB TSV path")
    p.add_argument("--min-count", type=int, default=3,
                   help="frequency filter threshold")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser("train-transe", help="train knowledge embeddings on a KB")
    p.add_argument("--kb", required=True)
    p.add_argument("--out", required=True, help="output embedding file")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--negatives", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_train_transe)

    p = sub.add_parser("spot", help="show retrieval for questions (JSONL out)")
    p.add_argument("--kb", required=True)
    p.add_argument("--dataset", help="question JSONL; stdin lines if omitted")
    p.add_argument("--slots", type=int, default=8)
    p.set_defaults(func=cmd_spot)

    p = sub.add_parser("train", help="train the memory network")
    p.add_argument("--dataset", required=True, help="training JSONL")
    p.add_argument("--kb")
    p.add_argument("--embeddings",
                   help="embedding file; derived from the KB and --seed if omitted")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--mode", choices=CLI_MODES, default="full")
    _add_model_dim_flags(p)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kb")
    p.add_argument("--embeddings")
    p.add_argument("--mode", choices=CLI_MODES, default="full")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for the derived embedding table (match training)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("query", help="interactive question loop")
    p.add_argument("--kb")
    p.add_argument("--embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--feature", required=True,
                   help="path to a JSON file holding the visual feature vector")
    p.add_argument("--mode", choices=CLI_MODES, default="full")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("gradcheck", help="analytic vs numeric gradients")
    p.add_argument("--mode", choices=CLI_MODES,
                   help="single mode (default: all modes)")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train/eval every mode, print the table")
    p.add_argument("--dataset", help="training JSONL (default: synthetic task)")
    p.add_argument("--test", help="test JSONL")
    p.add_argument("--kb")
    p.add_argument("--embeddings")
    _add_model_dim_flags(p)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("make-synth", help="write the synthetic benchmark files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--entities", type=int, default=20)
    p.add_argument("--relations", type=int, default=6)
    p.add_argument("--triples", type=int, default=30)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_make_synth)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _echo_config(args)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
