"""Command-line entry point: ``ebert {tokenize,pretrain,finetune,evaluate,analyze}``.

Exit codes: 0 success, 1 claim or threshold failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, metrics
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, preset_names
from .datasets import pretrain_corpus, split_finetune, tokenize_bins
from .genome_io import (
    Label,
    ParseError,
    TrackError,
    read_fasta,
    read_ideas_segmentation,
    read_labels,
    read_signal_track,
)
from .metrics import MetricError
from .model import NonFiniteError, init_params, parameter_count
from .records import IndexRow, index_path, read_index, read_records, to_pairs, write_records
from .synthetic import periodic_corpus
from .tokenizer import build_vocab
from .training import (
    FinetuneExample,
    finetune_loop,
    masked_token_accuracy,
    pretrain_loop,
)

log = logging.getLogger("ebert")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# shared plumbing


def _common(p: argparse.ArgumentParser, training: bool = True) -> None:
    p.add_argument("--config", help=f"preset ({', '.join(preset_names())}) or key=value file")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--k", type=int, help="k-mer size")
    p.add_argument("--stride", type=int, help="tokenization stride")
    p.add_argument("--dna-only", action="store_true", help="omit IDEAS inputs (DBERT mode)")
    p.add_argument("--with-aux", action="store_true", help="add DNase/mappability channels (EBERT+ mode)")
    if training:
        p.add_argument("--alpha", type=float, help="DNA loss weight")
    p.add_argument("-v", "--verbose", action="store_true")


def _resolve(args, default_preset: str) -> RunConfig:
    cfg = load_config(args.config, default_preset)
    over = {"seed": args.seed}
    if args.k is not None:
        over["kmer_size"] = args.k
        if args.stride is None:
            over["tokenization_stride"] = args.k
    if args.stride is not None:
        over["tokenization_stride"] = args.stride
    if args.dna_only:
        over["dna_only"] = True
    if args.with_aux:
        over["with_aux"] = True
    if getattr(args, "alpha", None) is not None:
        over["alpha"] = args.alpha
    if getattr(args, "steps", None) is not None:
        over["steps"] = args.steps
    if getattr(args, "max_epochs", None) is not None:
        over["max_epochs"] = args.max_epochs
    cfg = cfg.with_(**over)
    cfg.tokenizer()  # validate early
    cfg.loss()
    print(f"seed {cfg.seed}")
    return cfg


def _write_run_config(out_dir: Path, cfg: RunConfig, extra: dict) -> None:
    lines = cfg.to_text() + "".join(f"{k} = {v}\n" for k, v in extra.items())
    (out_dir / "run_config.txt").write_text(lines)
    log.info("resolved config:\n%s", lines)


def _fmt(x: float) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------
# tokenize


def cmd_tokenize(args) -> int:
    cfg = _resolve(args, "tiny")
    tok, vocab = cfg.tokenizer(), build_vocab(cfg.kmer_size)
    genome = read_fasta(args.genome)
    ideas = read_ideas_segmentation(args.ideas, args.cell)
    dnase = read_signal_track(args.dnase, "dnase") if args.dnase else None
    mapp = read_signal_track(args.mappability, "mappability") if args.mappability else None
    bins = read_labels(args.labels)
    examples, counts = tokenize_bins(bins, genome, ideas, dnase, mapp, tok, vocab,
                                     with_ideas=not cfg.dna_only, with_aux=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_records(out, [e.pair for e in examples], [e.label for e in examples],
                  [IndexRow(e.chrom, e.start, e.end, e.label) for e in examples])
    print(counts.summary())
    print(f"wrote {out} and {index_path(out)}")
    return EXIT_OK


# --------------------------------------------------------------------------
# pretrain


def _pretrain_corpus(args, cfg: RunConfig, vocab):
    tok = cfg.tokenizer()
    if args.synthetic:
        return periodic_corpus(args.synthetic, tok, vocab, np.random.default_rng(cfg.seed))
    if args.records:
        recs = read_records(args.records)
        return to_pairs(recs, with_ideas=not cfg.dna_only)
    if args.genome and args.ideas:
        genome = read_fasta(args.genome)
        tracks = []
        for spec in args.ideas:
            cell, _, path = spec.rpartition("=")
            tracks.append(read_ideas_segmentation(path, cell or Path(path).stem))
        return pretrain_corpus(genome, tracks, tok, vocab, stride=args.window_stride,
                               with_ideas=not cfg.dna_only)
    raise UsageError("pretrain needs --synthetic N, --records FILE, or --genome with --ideas")


def cmd_pretrain(args) -> int:
    cfg = _resolve(args, "tiny")
    mcfg = cfg.model()
    n_params = parameter_count(mcfg)
    print(f"model {mcfg.layers}x{mcfg.heads}x{mcfg.hidden} filter {mcfg.filter_size}: {n_params} parameters")
    if args.dry_run:
        init_params(mcfg, np.random.default_rng(cfg.seed))
        print("dry run: model instantiated, no training")
        return EXIT_OK
    if not args.out_dir:
        raise UsageError("--out-dir is required unless --dry-run")
    vocab = build_vocab(cfg.kmer_size)
    corpus = _pretrain_corpus(args, cfg, vocab)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_config(out, cfg, {"corpus_size": len(corpus), "parameters": n_params})
    pcfg = cfg.pretrain()

    def sink(step, params, opt, _log):
        save_checkpoint(out / f"checkpoint_step{step}.ebck",
                        Checkpoint(mcfg, cfg.tokenizer(), params, opt, {"step": step, "seed": cfg.seed}))

    t0 = time.perf_counter()
    try:
        res = pretrain_loop(corpus, mcfg, vocab, pcfg, sink=sink)
    except (FloatingPointError, NonFiniteError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    with open(out / "pretrain_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lr", "total", "dna", "ideas"])
        for step, lr, total, dna, ideas in res.log:
            w.writerow([step, _fmt(lr), _fmt(total), _fmt(dna), _fmt(ideas)])
    save_checkpoint(out / "checkpoint.ebck",
                    Checkpoint(mcfg, cfg.tokenizer(), res.params, res.opt_state, {"step": res.step, "seed": cfg.seed}))
    acc = masked_token_accuracy(res.params, mcfg, corpus, vocab, cfg.mask_rate, seed=cfg.seed)
    last = res.log[-1]
    print(f"steps {res.step}: total {last[2]:.4f} dna {last[3]:.4f} ideas {last[4]:.4f}; "
          f"masked-token accuracy {acc:.4f} ({time.perf_counter() - t0:.1f}s)")
    return EXIT_OK


# --------------------------------------------------------------------------
# finetune


def _load_examples(path, with_ideas: bool, with_aux: bool) -> list[FinetuneExample]:
    recs = read_records(path)
    idx = read_index(path)
    if len(idx) != len(recs):
        raise UsageError(f"{index_path(path)} has {len(idx)} rows for {len(recs)} records")
    pairs = to_pairs(recs, with_ideas=with_ideas, with_aux=with_aux)
    return [FinetuneExample(p, r.label, r.chrom, r.start, r.end) for p, r in zip(pairs, idx)]


def cmd_finetune(args) -> int:
    if not args.random_init and not args.base:
        raise UsageError("give --base CHECKPOINT or --random-init")
    cfg = _resolve(args, "tiny_finetune")
    mcfg = cfg.model()
    base = None
    if args.base:
        if not Path(args.base).exists():
            raise UsageError(f"{args.base}: checkpoint not found")
        ck = load_checkpoint(args.base)
        # architecture comes from the checkpoint; the head mode from this run
        mcfg = ck.model_cfg.with_(with_aux=cfg.with_aux, dropout=cfg.dropout,
                                  attention_dropout=cfg.attention_dropout)
        if ck.tokenizer_cfg != cfg.tokenizer():
            raise UsageError("base checkpoint tokenizer differs from the run configuration")
        base = ck.params
    examples = _load_examples(args.records, mcfg.uses_ideas, mcfg.with_aux)
    ds = split_finetune(examples)
    if not ds.train or not ds.eval:
        raise UsageError(f"empty split: {len(ds.train)} train / {len(ds.eval)} eval examples")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_config(out, cfg, {"base": args.base or "random-init", "train_examples": len(ds.train),
                                 "eval_examples": len(ds.eval)})
    res = finetune_loop(base, ds, mcfg, cfg.finetune())
    with open(out / "eval_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "auprc", "auroc", "loss"])
        for epoch, a, r, loss in res.log:
            w.writerow([epoch, _fmt(a), _fmt(r), _fmt(loss)])
    with open(out / "predictions.tsv", "w") as fh:
        for ex, s in zip(ds.eval, res.eval_scores):
            fh.write(f"{ex.chrom}\t{ex.start}\t{ex.end}\t{float(s)!r}\n")
    save_checkpoint(out / "checkpoint.ebck",
                    Checkpoint(mcfg, cfg.tokenizer(), res.params, None,
                               {"epochs": len(res.log), "seed": cfg.seed, "base": args.base or "random-init"}))
    final = res.log[-1]
    hit = res.epochs_to(args.target_auprc) if args.target_auprc is not None else None
    print(f"epochs {len(res.log)} (early stop: {res.stopped_early}); final eval AUPRC {final[1]:.4f} "
          f"AUROC {final[2]:.4f}")
    if args.target_auprc is not None:
        print(f"target AUPRC {args.target_auprc}: " + (f"reached at epoch {hit}" if hit else "not reached"))
        if hit is None:
            return EXIT_FAIL
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluate


def read_predictions(path) -> dict[tuple[str, int, int], float]:
    preds = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            f = line.split()
            if not f or f[0].startswith("#"):
                continue
            if len(f) != 4:
                raise ParseError(str(path), lineno, "expected 'chrom start end score'")
            try:
                key, score = (f[0], int(f[1]), int(f[2])), float(f[3])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ParseError(str(path), lineno, "non-numeric coordinate or score") from None
            if key in preds:
                raise ParseError(str(path), lineno, f"duplicate prediction for {key}")
            preds[key] = score
    if not preds:
        raise ParseError(str(path), 0, "no predictions")
    return preds


def cmd_evaluate(args) -> int:
    preds = read_predictions(args.predictions)
    labels = {(b.chromosome, b.start, b.end): b.label for b in read_labels(args.labels)}
    unknown = [k for k in preds if k not in labels]
    if unknown:
        raise UsageError(f"{len(unknown)} prediction(s) have no label, e.g. {unknown[0]}")
    keys = [k for k in preds if labels[k] is not Label.AMBIGUOUS]
    skipped = len(preds) - len(keys)
    scores = np.array([preds[k] for k in keys])
    y = np.array([labels[k] is Label.BOUND for k in keys], dtype=np.int64)
    report = metrics.evaluate(scores, y)
    print(f"bins scored {len(keys)} (Bound {int(y.sum())}), Ambiguous skipped {skipped}")
    rows = report.as_dict()
    for k, v in rows.items():
        print(f"{k:<16} {v:.6f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for k, v in rows.items():
                w.writerow([k, _fmt(v)])
    return EXIT_OK


# --------------------------------------------------------------------------
# analyze


def cmd_analyze(args) -> int:
    t0 = time.perf_counter()
    report = analysis.analyze_published_tables(args.table_s1, args.table1)
    text = report.to_text()
    print(text)
    print(f"({(time.perf_counter() - t0) * 1000:.1f} ms)")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "analysis.txt").write_text(text + "\n")
        (out / "analysis.csv").write_text(report.to_csv())
    return EXIT_OK if report.all_passed else EXIT_FAIL


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ebert", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tokenize", help="label bins -> EBRT0001 records")
    _common(t, training=False)
    t.add_argument("--genome", required=True)
    t.add_argument("--ideas", required=True)
    t.add_argument("--cell", default="cell", help="cell type name for the IDEAS track")
    t.add_argument("--dnase")
    t.add_argument("--mappability")
    t.add_argument("--labels", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tokenize)

    r = sub.add_parser("pretrain", help="paired masked-LM pre-training")
    _common(r)
    src = r.add_mutually_exclusive_group()
    src.add_argument("--synthetic", type=int, metavar="N", help="N periodic synthetic sequences")
    src.add_argument("--records", help="EBRT0001 file used as an unlabeled corpus")
    src.add_argument("--genome", help="FASTA to tile (with --ideas)")
    r.add_argument("--ideas", action="append", metavar="[CELL=]PATH", help="IDEAS track; repeatable")
    r.add_argument("--window-stride", type=int, default=1000)
    r.add_argument("--steps", type=int)
    r.add_argument("--out-dir")
    r.add_argument("--dry-run", action="store_true", help="instantiate the model and report its size")
    r.set_defaults(func=cmd_pretrain)

    f = sub.add_parser("finetune", help="TF-binding fine-tuning")
    _common(f)
    f.add_argument("--records", required=True, help="EBRT0001 file from 'tokenize'")
    f.add_argument("--base", help="pre-trained checkpoint")
    f.add_argument("--random-init", action="store_true")
    f.add_argument("--max-epochs", type=int)
    f.add_argument("--target-auprc", type=float, help="exit 1 unless eval AUPRC reaches this")
    f.add_argument("--out-dir", required=True)
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("evaluate", help="score predictions against labels")
    e.add_argument("--predictions", required=True, help="TSV chrom start end score")
    e.add_argument("--labels", required=True)
    e.add_argument("--out", help="CSV output")
    e.add_argument("-v", "--verbose", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("analyze", help="recompute published aggregate claims")
    a.add_argument("--table-s1", help="per-model metric table (default: shipped copy)")
    a.add_argument("--table1", help="per-dataset rank table (default: shipped copy)")
    a.add_argument("--out-dir")
    a.add_argument("-v", "--verbose", action="store_true")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ParseError, TrackError, FileNotFoundError,
            analysis.FixtureError, MetricError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
