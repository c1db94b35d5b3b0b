"""Command line interface.

Verbs: train, annotate, evaluate, build-index, serve, curves.

Exit codes: 0 success, 1 usage error, 2 data/configuration error,
3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import MtconfError, NumericalError

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtconf", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train a translation model")
    p.add_argument("--corpus", required=True, help="tab-separated pairs, or source file with --target")
    p.add_argument("--target", help="target-side file when --corpus is source-only")
    p.add_argument("--out", required=True, help="checkpoint output directory")
    p.add_argument("--vocab-size", type=int, default=400)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--d-ff", type=int, default=64)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corpus-id", default="")

    p = sub.add_parser("annotate", help="translate a test set and annotate mistranslations")
    _add_common_eval_args(p)

    p = sub.add_parser("evaluate", help="annotate (cached) and score all attribution methods")
    _add_common_eval_args(p)
    p.add_argument("--alignments", help="Pharaoh file aligning source to candidate words")
    p.add_argument("--out", required=True, help="output directory for curves and summary")
    p.add_argument("--norm", default="l1", choices=["l1", "l2", "linf"])
    p.add_argument("--aggregation", default="sum", choices=["sum", "avg", "max"])
    p.add_argument("--log-space-gradient", action="store_true",
                   help="score with the gradient of log P instead of P")

    p = sub.add_parser("build-index", help="build the suggestion index")
    p.add_argument("--corpus", required=True, help="source-side text, one sentence per line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-frequency", type=int, default=10)
    p.add_argument("--corpus-id", default="")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--checkpoint")
    p.add_argument("--index")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--metrics-summary", help="summary.json from an evaluate run")
    p.add_argument("--static-dir", help="directory with the web UI build")

    p = sub.add_parser("curves", help="render PR/ROC figures from exported CSVs")
    p.add_argument("--csv-dir", required=True)
    p.add_argument("--out", help="output directory (default: alongside the CSVs)")

    return parser


def _add_common_eval_args(p):
    p.add_argument("--testset", required=True, help="JSONL with source/reference fields")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", required=True, help="annotation cache JSONL path")
    p.add_argument("--backend", choices=["mock", "http"], default="mock")
    p.add_argument("--mock-responses", help="JSON file: list of responses or prompt->response map")
    p.add_argument("--endpoint", help="chat-completions endpoint for --backend http")
    p.add_argument("--model-tag", default="gpt-4o-2024-11-20", help="annotator model snapshot tag")
    p.add_argument("--source-lang", default="English")
    p.add_argument("--target-lang", default="German")
    p.add_argument("--beam", type=int, default=0, help="beam width (0 = greedy)")


def _make_backend(args):
    from .annotator import HttpBackend, MockBackend

    if args.backend == "http":
        if not args.endpoint:
            raise MtconfError("--backend http requires --endpoint")
        return HttpBackend(endpoint=args.endpoint, snapshot=args.model_tag)
    if not args.mock_responses:
        raise MtconfError("--backend mock requires --mock-responses")
    script = json.loads(Path(args.mock_responses).read_text())
    return MockBackend(script, snapshot=args.model_tag)


def _cmd_train(args) -> int:
    from .train import TrainConfig, load_parallel_corpus, train_model

    pairs = load_parallel_corpus(args.corpus, args.target)
    config = TrainConfig(
        vocab_size=args.vocab_size, d_model=args.d_model, num_heads=args.heads,
        num_layers=args.layers, d_ff=args.d_ff, max_len=args.max_len,
        batch_size=args.batch_size, epochs=args.epochs, max_steps=args.max_steps,
        lr=args.lr, seed=args.seed, corpus_id=args.corpus_id,
    )
    checkpoint = train_model(pairs, config)
    checkpoint.save(args.out)
    meta = checkpoint.metadata
    print(f"trained {meta['steps']} steps on {len(pairs)} pairs")
    print(f"validation perplexity {meta['initial_val_perplexity']:.2f} -> "
          f"{meta['final_val_perplexity']:.2f}")
    print(f"checkpoint saved to {args.out}")
    return 0


def _translate_and_annotate(args):
    from .annotator import AnnotationCache
    from .model import Checkpoint
    from .pipeline import load_testset, run_evaluation

    checkpoint = Checkpoint.load(args.checkpoint)
    entries = load_testset(args.testset)
    cache = AnnotationCache(args.cache)
    backend = _make_backend(args)

    alignments = None
    if getattr(args, "alignments", None):
        alignments = _read_alignments_deferred(args.alignments)

    run = run_evaluation(
        entries, checkpoint, backend, cache, alignments=alignments,
        source_lang=args.source_lang, target_lang=args.target_lang,
        norm=getattr(args, "norm", "l1"), aggregation=getattr(args, "aggregation", "sum"),
        log_space_gradient=getattr(args, "log_space_gradient", False),
        decode_mode="beam" if args.beam else "greedy", beam_width=args.beam or 4,
    )
    return run, cache


def _read_alignments_deferred(path):
    """Pharaoh lines are validated against candidate word counts, which only
    exist after translation; return a callable for run_evaluation."""
    from .attribution import parse_pharaoh_line
    from .errors import DataError

    lines = Path(path).read_text(encoding="utf-8").splitlines()

    def build(sentences):
        alignments = []
        for s in sentences:
            if s.entry_index >= len(lines):
                raise DataError(f"{path}: no alignment line for test sentence {s.entry_index}")
            alignments.append(parse_pharaoh_line(
                lines[s.entry_index],
                len(s.source.surface_words),
                len(s.candidate.surface_words),
            ))
        return alignments

    return build


def _cmd_annotate(args) -> int:
    run, cache = _translate_and_annotate(args)
    labeled = sum(1 for s in run.sentences if s.positive_indices)
    total_triples = sum(len(s.positive_indices) for s in run.sentences)
    print(f"annotated {len(run.sentences)} sentences "
          f"({run.skipped_sentences} skipped, cache now {len(cache)} records)")
    print(f"{total_triples} mistranslated words across {labeled} sentences")
    return 0


def _cmd_evaluate(args) -> int:
    from .evaluation import export_curves

    run, _ = _translate_and_annotate(args)
    out_dir = Path(args.out)
    written = export_curves(list(run.reports.values()), out_dir)
    for name, report in run.reports.items():
        print(f"{name:12s} max F1 {report.max_f1:.4f} @ threshold "
              f"{report.threshold_at_max_f1:.6g}  AUC-PR {report.auc_pr:.4f}  "
              f"AUC-ROC {report.auc_roc:.4f}")
    print(f"curves and summary written to {out_dir}")
    return 0


def _cmd_build_index(args) -> int:
    from .model import Checkpoint
    from .suggestions import build_index

    checkpoint = Checkpoint.load(args.checkpoint)
    lines = Path(args.corpus).read_text(encoding="utf-8").splitlines()
    index = build_index(lines, checkpoint, min_frequency=args.min_frequency,
                        corpus_id=args.corpus_id)
    index.save(args.out)
    print(f"indexed {len(index)} words (min frequency {args.min_frequency}) -> {args.out}")
    return 0


def _cmd_serve(args) -> int:
    from .service import ServiceConfig, serve

    config = ServiceConfig.from_file(
        args.config,
        checkpoint=args.checkpoint, index=args.index, host=args.host, port=args.port,
        threshold=args.threshold, metrics_summary=args.metrics_summary,
        static_dir=args.static_dir,
    )
    serve(config)
    return 0


def _cmd_curves(args) -> int:
    from .evaluation import render_curves

    pr_png, roc_png = render_curves(args.csv_dir, args.out)
    print(f"wrote {pr_png} and {roc_png}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "annotate": _cmd_annotate,
    "evaluate": _cmd_evaluate,
    "build-index": _cmd_build_index,
    "serve": _cmd_serve,
    "curves": _cmd_curves,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except NumericalError as exc:
        print(f"mtconf {args.verb}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MtconfError as exc:
        print(f"mtconf {args.verb}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"mtconf {args.verb}: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
