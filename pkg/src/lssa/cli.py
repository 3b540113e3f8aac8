"""Command-line entry points: ``lssa <subcommand> ...`` or ``python3 -m lssa``.

Every subcommand accepts ``--seed`` and ``--config FILE``. Config values
(flat ``key=value``) replace the parser defaults; flags given explicitly on
the command line still win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import codec as codec_mod
from .autoencoder import train_ae
from .corpus import (CARRIER, STEGO, Vocab, build_vocab, encode_texts, read_corpus,
                     split_dataset, tokenize, write_corpus)
from .errors import LssaError, StageError
from .harness import load_config, parse_config_text, run_experiment
from .language_model import perplexities, perplexity_report, positionwise_perplexity, train_lm
from .lstm import ModelConfig, grad_check, load_checkpoint, save_checkpoint
from .numkernel import Rng, derive_seed, rng_bits
from .steganalyzer import (GREATER, LESS, ThresholdDetector, classifier_predictor, evaluate, finetune,
                           fit_threshold, init_classifier)
from .synth import synth_corpus

GRAD_TOL = 1e-4


def _model_flags(p):
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--hidden-dim", type=int, default=256)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dropout-keep", type=float, default=0.5)


def _train_flags(p):
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)


def _model_config(args, vocab_size):
    return ModelConfig(vocab_size, args.embed_dim, args.hidden_dim, args.layers, args.dropout_keep)


def _labeled(args, vocab):
    car = encode_texts(read_corpus(args.carrier), vocab, CARRIER, "carrier:")
    st = encode_texts(read_corpus(args.stego), vocab, STEGO, "stego:")
    return car + st


def _bits_line(bits) -> str:
    return "".join(str(b) for b in bits)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth_corpus(args):
    lines = synth_corpus(args.seed, args.sentences, args.mean_len, args.types, args.classes,
                         args.branching, path=args.out, zipf=args.zipf)
    print(f"wrote {len(lines)} sentences to {args.out}")


def cmd_build_vocab(args):
    vocab = build_vocab((tokenize(t) for t in read_corpus(args.corpus)), args.cap)
    vocab.save(args.out)
    print(f"wrote {len(vocab)} ids to {args.out}")


def _train(args, trainer, stage):
    vocab = Vocab.load(args.vocab)
    seqs = encode_texts(read_corpus(args.train), vocab, None, "train:")
    if args.val:
        val = encode_texts(read_corpus(args.val), vocab, None, "val:")
    else:
        sp = split_dataset(seqs, derive_seed(args.seed, "val-split"), test_frac=0.0)
        seqs, val = sp.train, sp.validation
    hist = trainer(seqs, val, _model_config(args, len(vocab)), args.seed, epochs=args.epochs,
                   batch_size=args.batch_size, lr=args.lr)
    save_checkpoint(args.out, hist.params, args.seed, stage, {"best_epoch": hist.best_epoch})
    print(json.dumps({"best_epoch": hist.best_epoch, "val_loss": hist.val_loss,
                      "val_ppl": float(np.exp(min(hist.val_loss)))}))


def cmd_train_lm(args):
    _train(args, train_lm, "lm")


def cmd_train_ae(args):
    _train(args, train_ae, "ae-pretrain")


def _codec(args):
    return codec_mod.CodecSpec.parse(args.codec, derive_seed(args.seed, "partition"))


def cmd_embed(args):
    params, _ = load_checkpoint(args.lm)
    vocab = Vocab.load(args.vocab)
    spec = _codec(args)
    rng = Rng(derive_seed(args.seed, "embed"))
    span = args.max_len - args.min_len + 1
    len_rng = rng.child("lengths")
    lengths = [args.min_len + len_rng.randbelow(span) for _ in range(args.texts)]
    max_bits = spec.param if spec.method != "vlc" else spec.param - 1
    payloads = [rng_bits(rng.child(f"payload:{i}"), n * max_bits) for i, n in enumerate(lengths)]
    records = codec_mod.embed_batch(params, spec, payloads, lengths)
    write_corpus(args.out, (" ".join(vocab.decode(r.tokens.ids)) for r in records))
    Path(args.out + ".meta.json").write_text(codec_mod.sidecar(spec, records, payloads, master=args.seed))
    if args.bits_out:
        write_corpus(args.bits_out, (_bits_line(p.bits[: r.bits_consumed])
                                     for p, r in zip(payloads, records)))
    print(json.dumps({"texts": len(records), "bpw": codec_mod.measure_bpw(records)}))


def cmd_extract(args):
    params, _ = load_checkpoint(args.lm)
    vocab = Vocab.load(args.vocab)
    spec = _codec(args)
    meta = json.loads(Path(args.meta).read_text()) if args.meta else None
    if meta is not None and meta["codec"] != spec.to_dict():
        raise LssaError(f"sidecar was written for {meta['codec']}, not {spec.to_dict()}")
    seqs = encode_texts(read_corpus(args.stego), vocab)
    streams = codec_mod.extract_batch(params, spec, [s.ids for s in seqs])
    write_corpus(args.out, (_bits_line(s.bits) for s in streams))
    report = {"texts": len(streams), "bits": sum(len(s.bits) for s in streams)}
    if meta is not None:
        bad = codec_mod.verify_extraction(meta, streams)
        report["digest_failures"] = bad
        if bad:
            print(json.dumps(report))
            raise LssaError(f"payload digest mismatch in {len(bad)} text(s)")
    print(json.dumps(report))


def cmd_perplexity(args):
    params, _ = load_checkpoint(args.lm)
    vocab = Vocab.load(args.vocab)
    seqs = encode_texts(read_corpus(args.texts), vocab)
    ppl = perplexities(params, seqs)
    rows = ["index\tperplexity\tpositionwise"]
    for i, (s, p) in enumerate(zip(seqs, ppl)):
        pw = positionwise_perplexity(params, s) if args.positionwise else []
        rows.append(f"{i}\t{p:.10g}\t" + ",".join(f"{x:.6g}" for x in pw))
    Path(args.out).write_text("\n".join(rows) + "\n")
    print(json.dumps({"texts": len(seqs), "mean_log2_perplexity": float(np.mean(np.log2(ppl)))}))


def cmd_report_perplexity(args):
    params, _ = load_checkpoint(args.lm)
    vocab = Vocab.load(args.vocab)
    labeled = {"carrier": encode_texts(read_corpus(args.carrier), vocab, CARRIER)}
    for item in args.stego:
        name, _, path = item.partition("=")
        labeled[name] = encode_texts(read_corpus(path), vocab, STEGO)
    rep = perplexity_report(params, labeled, args.bins)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(labeled)
    width = max(len(c.position_means) for c in rep.classes.values())
    lines = ["position\t" + "\t".join(names)]
    for pos in range(width):
        vals = [rep.classes[n].position_means for n in names]
        lines.append(f"{pos + 1}\t" + "\t".join(f"{v[pos]:.6f}" if pos < len(v) else "" for v in vals))
    (out / "fig1.tsv").write_text("\n".join(lines) + "\n")
    lines = ["bin_left\tbin_right\t" + "\t".join(names)]
    for b in range(len(rep.bin_edges) - 1):
        lines.append(f"{rep.bin_edges[b]:.6f}\t{rep.bin_edges[b + 1]:.6f}\t" +
                     "\t".join(str(int(rep.classes[n].counts[b])) for n in names))
    (out / "fig2.tsv").write_text("\n".join(lines) + "\n")
    print(json.dumps({"auc": rep.auc, "separation": rep.separation}, sort_keys=True))


def cmd_finetune(args):
    vocab = Vocab.load(args.vocab)
    records = _labeled(args, vocab)
    sp = split_dataset(records, derive_seed(args.seed, "split"))
    cfg = _model_config(args, len(vocab))
    clf = init_classifier(args.init, cfg, args.seed, args.source)
    hist = finetune(clf, sp.train, sp.validation, args.seed, epochs=args.epochs,
                    batch_size=args.batch_size, lr=args.lr, patience=args.patience)
    save_checkpoint(args.out, hist.params, args.seed, "finetune", {"init": args.init})
    rep = evaluate(classifier_predictor(hist.params), sp.test)
    if args.test_out:
        out = Path(args.test_out)
        out.mkdir(parents=True, exist_ok=True)
        for lab, name in ((CARRIER, "carrier"), (STEGO, "stego")):
            write_corpus(out / f"test_{name}.txt",
                         (" ".join(vocab.decode(s.ids)) for s in sp.test if s.label == lab))
    print(json.dumps({"acc": rep.acc, "f1": rep.f1, "epochs_ran": hist.stopped_epoch or hist.epochs_ran,
                      "val_loss": hist.val_loss}))


def cmd_fit_threshold(args):
    params, _ = load_checkpoint(args.lm)
    vocab = Vocab.load(args.vocab)
    records = _labeled(args, vocab)
    det = fit_threshold(perplexities(params, records), [s.label for s in records])
    Path(args.out).write_text(json.dumps({"tau": det.tau, "direction": det.direction,
                                          "val_acc": det.val_acc}, indent=1) + "\n")
    print(json.dumps({"tau": det.tau, "direction": det.direction, "val_acc": det.val_acc}))


def cmd_evaluate(args):
    vocab = Vocab.load(args.vocab)
    records = _labeled(args, vocab)
    if args.classifier:
        params, _ = load_checkpoint(args.classifier)
        predictor = classifier_predictor(params)
    else:
        if not (args.threshold and args.lm):
            raise LssaError("evaluate needs --classifier, or --threshold with --lm")
        t = json.loads(Path(args.threshold).read_text())
        if t["direction"] not in (GREATER, LESS):
            raise LssaError(f"bad threshold direction {t['direction']!r}")
        det = ThresholdDetector(t["tau"], t["direction"])
        lm, _ = load_checkpoint(args.lm)
        predictor = lambda seqs: det.predict_scores(perplexities(lm, seqs))  # noqa: E731
    rep = evaluate(predictor, records)
    print(json.dumps({"acc": rep.acc, "f1": rep.f1, "precision": rep.precision, "recall": rep.recall,
                      "tp": rep.tp, "fp": rep.fp, "fn": rep.fn, "tn": rep.tn}))


def cmd_run_experiment(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    cfg = load_config(args.config, **overrides)
    res = run_experiment(cfg)
    print(f"{len(res.rows)} result rows written to {res.output_dir}")


def cmd_grad_check(args):
    cfg = ModelConfig(args.vocab_size, args.embed_dim, args.hidden_dim, args.layers, 1.0)
    objectives = ["lm", "ae", "cls"] if args.objective == "all" else [args.objective]
    worst = 0.0
    for obj in objectives:
        err = grad_check(cfg, args.seed, args.eps, obj)
        print(f"{obj}: max relative error {err:.3e}")
        worst = max(worst, err)
    ok = worst < GRAD_TOL
    print(f"{'PASS' if ok else 'FAIL'} (tolerance {GRAD_TOL:g})")
    return 0 if ok else 1


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lssa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--config", help="flat key=value file replacing defaults")
        p.set_defaults(func=func)
        return p

    p = add("synth-corpus", cmd_synth_corpus, "write a synthetic line-per-sentence corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--sentences", type=int, default=10000)
    p.add_argument("--mean-len", type=float, default=10.0)
    p.add_argument("--types", type=int, default=2000)
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--branching", type=int, default=4)
    p.add_argument("--zipf", type=float, default=1.3)

    p = add("build-vocab", cmd_build_vocab, "frequency-capped vocabulary file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cap", type=int, default=2000)

    for name, func in (("train-lm", cmd_train_lm), ("train-ae", cmd_train_ae)):
        p = add(name, func, f"{name[6:].upper()} pre-training on carrier text")
        p.add_argument("--train", required=True)
        p.add_argument("--val")
        p.add_argument("--vocab", required=True)
        p.add_argument("--out", required=True)
        _model_flags(p)
        _train_flags(p)

    for name, func in (("embed", cmd_embed), ("extract", cmd_extract)):
        p = add(name, func, "hide PRNG payload bits in generated text" if name == "embed"
                else "recover bits from stego text")
        p.add_argument("--lm", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--codec", required=True, help="bins:b, flc:k or vlc:m")
        p.add_argument("--out", required=True)
        if name == "embed":
            p.add_argument("--texts", type=int, default=100)
            p.add_argument("--min-len", type=int, default=5)
            p.add_argument("--max-len", type=int, default=30)
            p.add_argument("--bits-out", help="also write the embedded bits, one text per line")
        else:
            p.add_argument("--stego", required=True)
            p.add_argument("--meta", help="sidecar written by embed; verifies payload digests")

    p = add("perplexity", cmd_perplexity, "per-text perplexity under an LM")
    p.add_argument("--lm", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--positionwise", action="store_true")

    p = add("report-perplexity", cmd_report_perplexity, "position-wise means and histograms")
    p.add_argument("--lm", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--carrier", required=True)
    p.add_argument("--stego", action="append", default=[], metavar="NAME=PATH", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bins", type=int, default=20)

    p = add("finetune", cmd_finetune, "train the carrier/stego classifier")
    p.add_argument("--carrier", required=True)
    p.add_argument("--stego", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--init", choices=["random", "from_lm", "from_ae"], default="random")
    p.add_argument("--source", help="pre-trained checkpoint for from_lm / from_ae")
    p.add_argument("--out", required=True)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--test-out", help="directory for the held-out test texts")
    _model_flags(p)
    _train_flags(p)

    p = add("fit-threshold", cmd_fit_threshold, "perplexity threshold detector")
    p.add_argument("--lm", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--carrier", required=True)
    p.add_argument("--stego", required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "Acc / F1 of a classifier or threshold detector")
    p.add_argument("--vocab", required=True)
    p.add_argument("--carrier", required=True)
    p.add_argument("--stego", required=True)
    p.add_argument("--classifier")
    p.add_argument("--threshold")
    p.add_argument("--lm")

    p = add("run-experiment", cmd_run_experiment, "whole pipeline from an experiment config")
    p.add_argument("--output-dir")

    p = add("grad-check", cmd_grad_check, "finite-difference gradient check")
    p.add_argument("--objective", choices=["lm", "ae", "cls", "all"], default="all")
    p.add_argument("--vocab-size", type=int, default=12)
    p.add_argument("--embed-dim", type=int, default=4)
    p.add_argument("--hidden-dim", type=int, default=5)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-5)
    return parser


def _apply_config(parser, argv):
    """Re-parse with config-file values as defaults for the chosen subcommand."""
    args = parser.parse_args(argv)
    if not args.config or args.command == "run-experiment":
        return args
    raw = parse_config_text(Path(args.config).read_text())
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(raw) - known)
    if unknown:
        parser.error(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    typed = {}
    for a in sub._actions:
        if a.dest in raw:
            v = raw[a.dest]
            if a.const is True and a.nargs == 0:
                typed[a.dest] = v.lower() in ("1", "true", "yes", "on")
            else:
                typed[a.dest] = a.type(v) if a.type else v
    sub.set_defaults(**typed)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    args = _apply_config(parser, argv)
    if args.seed is None and args.command != "run-experiment":
        args.seed = 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LssaError, OSError, ValueError, KeyError, IndexError) as exc:
        print(f"error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
