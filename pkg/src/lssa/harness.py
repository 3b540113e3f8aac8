"""End-to-end experiment: steganographer LM, stego sets, pre-training, fine-tuning, reports.

Everything written under the output directory is a pure function of the
config file; no timestamps are recorded anywhere.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import shutil
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import codec as codec_mod
from .autoencoder import train_ae
from .corpus import (CARRIER, MAX_LEN, STEGO, TokenSequence, build_vocab, read_corpus,
                     split_dataset, tokenize, write_corpus)
from .errors import ConfigError, StageError
from .language_model import (discrimination, perplexities, perplexity_report, train_lm,
                             unigram_perplexity)
from .lstm import ModelConfig, ModelParams, save_checkpoint
from .numkernel import Rng, derive_seed, rng_bits
from .steganalyzer import (MetricsReport, classifier_predictor, evaluate, finetune,
                           fit_threshold, init_classifier)
from .synth import synth_corpus

log = logging.getLogger(__name__)

DEVIATIONS = [
    "word-level tokenizer replaces BERT WordPiece",
    "stego generation runs to a fixed sampled length; specials excluded from candidate pools",
    "dropout keep-probability applies to the embedding output only",
    "gradient global-norm clipping at 5.0",
    "fine-tuning: early stopping with patience on validation loss; fixed-epoch numbers also reported",
    "stego is the positive class for F1",
    "pre-training pool = carrier training texts topped up from a disjoint carrier reservoir",
]

CSV_COLUMNS = ["dataset", "codec", "bpw", "init_mode", "pretrain_size", "seed", "acc", "f1",
               "epochs_ran", "epochs_to_threshold", "acc_fixed", "f1_fixed", "tp", "fp", "fn", "tn",
               "config_hash", "lineage"]


@dataclass
class ExperimentConfig:
    output_dir: str = "runs/experiment"
    dataset: str = "synthetic"
    corpus: str = ""                   # empty: synthesize
    synth_sentences: int = 30000
    synth_mean_len: float = 10.0
    synth_types: int = 2000
    synth_classes: int = 20
    synth_branching: int = 4
    synth_zipf: float = 1.3
    vocab_cap: int = 2000
    max_len: int = MAX_LEN
    embed_dim: int = 128
    hidden_dim: int = 256
    layers: int = 2
    dropout_keep: float = 0.5
    codecs: list = field(default_factory=lambda: ["bins:1", "bins:2", "bins:3", "flc:1", "flc:2",
                                                  "flc:3", "vlc:4", "vlc:8", "vlc:16"])
    texts_per_class: int = 10000
    pretrain_modes: list = field(default_factory=lambda: ["none", "lm", "ae"])
    pretrain_sizes: list = field(default_factory=list)   # empty: carrier training texts only
    seed: int = 0
    replicates: int = 1
    steg_epochs: int = 10
    pretrain_epochs: int = 10
    finetune_epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-3
    patience: int = 5
    threshold_epoch: int = 5
    finetune_dropout: bool = True
    disjoint_corpora: bool = True
    steg_fraction: float = 0.5
    hist_bins: int = 30
    report_texts: int = 1000
    save_classifiers: bool = False

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size, self.embed_dim, self.hidden_dim, self.layers, self.dropout_keep)

    def replicate_seeds(self) -> list[int]:
        return [derive_seed(self.seed, f"replicate:{r}") for r in range(self.replicates)]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        # output_dir does not change results
        cfg = dataclasses.replace(self, output_dir="")
        return hashlib.sha256(cfg.to_text().encode()).hexdigest()[:16]


def _coerce(f, raw: str):
    raw = raw.strip()
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{f.name}: expected a boolean, got {raw!r}")
    if isinstance(default, list):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if f.name == "pretrain_sizes":
            return [int(x) for x in items]
        return items
    try:
        return type(default)(raw)
    except ValueError as exc:
        raise ConfigError(f"{f.name}: cannot parse {raw!r}") from exc


def parse_config_text(text: str) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def load_config(path=None, **overrides) -> ExperimentConfig:
    raw = parse_config_text(Path(path).read_text()) if path else {}
    raw.update({k: str(v) if not isinstance(v, str) else v for k, v in overrides.items()})
    known = {f.name: f for f in fields(ExperimentConfig)}
    kwargs = {}
    for k, v in raw.items():
        if k not in known:
            raise ConfigError(f"unknown config key {k!r}")
        kwargs[k] = _coerce(known[k], v)
    cfg = ExperimentConfig(**kwargs)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if not cfg.codecs:
        raise ConfigError("at least one codec is required")
    for c in cfg.codecs:
        codec_mod.CodecSpec.parse(c)
    bad = set(cfg.pretrain_modes) - {"none", "lm", "ae"}
    if bad:
        raise ConfigError(f"unknown pretrain modes {sorted(bad)}")
    if cfg.texts_per_class < 5:
        raise ConfigError("texts_per_class must be >= 5")
    if not 0.0 < cfg.steg_fraction < 1.0:
        raise ConfigError("steg_fraction must lie in (0, 1)")


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def _params_hash(params: ModelParams) -> str:
    h = hashlib.sha256()
    for name, b in params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(b.value, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if x != x else f"{x:.6f}"
    return str(x)


def _write_tsv(path: Path, header: list, rows: list) -> None:
    lines = ["\t".join(header)] + ["\t".join(_fmt(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def _encode(lines, vocab, label, prefix, max_len):
    return [TokenSequence(vocab.encode(tokenize(t), max_len), label, f"{prefix}{i}")
            for i, t in enumerate(lines)]


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and not isinstance(ev, StageError):
            raise StageError(self.name, ev) from ev
        return False


def pretrain_pool(carrier_train: list, reservoir: list, size: Optional[int]) -> list:
    if size is None:
        return list(carrier_train)
    if size <= len(carrier_train):
        return list(carrier_train[:size])
    need = size - len(carrier_train)
    if need > len(reservoir):
        raise ConfigError(f"pre-training size {size} exceeds available carriers "
                          f"({len(carrier_train) + len(reservoir)})")
    return list(carrier_train) + list(reservoir[:need])


# --------------------------------------------------------------------------
# one replicate
# --------------------------------------------------------------------------

@dataclass
class ReplicateResult:
    seed: int
    rows: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)        # (codec, mode, size) -> (train, val)
    auc_rows: list = field(default_factory=list)
    fig1: list = field(default_factory=list)
    fig2: list = field(default_factory=list)
    fig3: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def run_replicate(cfg: ExperimentConfig, lines: list, seed: int, out: Path) -> ReplicateResult:
    res = ReplicateResult(seed)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = cfg.content_hash()
    codecs = [codec_mod.CodecSpec.parse(c, derive_seed(seed, f"partition:{c}")) for c in cfg.codecs]
    N = cfg.texts_per_class

    with _Stage("corpus"):
        perm = Rng(derive_seed(seed, "corpus-partition")).permutation(len(lines))
        n_steg = int(round(cfg.steg_fraction * len(lines)))
        steg_lines = [lines[i] for i in perm[:n_steg]]
        analyst_lines = [lines[i] for i in perm[n_steg:]] if cfg.disjoint_corpora else \
            [lines[i] for i in perm]
        if len(analyst_lines) < N:
            raise ConfigError(f"{len(analyst_lines)} analyst texts < texts_per_class={N}")
        carrier_lines = analyst_lines[:N]
        reservoir_lines = analyst_lines[N:]
        steg_vocab = build_vocab((tokenize(t) for t in steg_lines), cfg.vocab_cap)
        ana_vocab = build_vocab((tokenize(t) for t in analyst_lines), cfg.vocab_cap)
        steg_vocab.save(out / "steg_vocab.txt")
        ana_vocab.save(out / "analyst_vocab.txt")

    with _Stage("steg-lm"):
        steg_seqs = _encode(steg_lines, steg_vocab, None, "steg:", cfg.max_len)
        steg_split = split_dataset(steg_seqs, derive_seed(seed, "steg-split"), test_frac=0.0)
        steg_cfg = cfg.model_config(len(steg_vocab))
        steg_seed = derive_seed(seed, "steg-lm")
        h = train_lm(steg_split.train, steg_split.validation, steg_cfg, steg_seed,
                     epochs=cfg.steg_epochs, batch_size=cfg.batch_size, lr=cfg.lr)
        steg_lm = h.params
        save_checkpoint(out / "steg_lm.ckpt", steg_lm, steg_seed, "steg-lm")
        steg_hash = _sha((out / "steg_lm.ckpt").read_bytes())
        res.meta["steg_lm"] = {"val_loss": h.val_loss, "best_epoch": h.best_epoch,
                               "unigram_ppl": unigram_perplexity(steg_split.train, steg_split.validation),
                               "val_ppl": float(np.exp(min(h.val_loss)))}

    # stego lengths follow the steganographer corpus word-count distribution
    word_counts = [len(s.ids) - 2 for s in steg_seqs if len(s.ids) > 2]
    stego_by_codec = {}
    stego_steg_ids = {}
    for spec in codecs:
        with _Stage(f"embed:{spec.name}"):
            rng = Rng(derive_seed(seed, f"stego:{spec.name}"))
            idx = rng.child("lengths").choice(len(word_counts), N)
            lengths = [word_counts[i] for i in idx]
            max_bits = spec.param if spec.method != "vlc" else spec.param - 1
            payloads = [rng_bits(rng.child(f"payload:{i}"), L * max_bits) for i, L in enumerate(lengths)]
            records = codec_mod.embed_batch(steg_lm, spec, payloads, lengths)
            texts = [" ".join(steg_vocab.decode(r.tokens.ids)) for r in records]
            write_corpus(out / f"stego_{spec.name}.txt", texts)
            (out / f"stego_{spec.name}.meta.json").write_text(
                codec_mod.sidecar(spec, records, payloads, master=seed, partition=spec.partition_seed))
            bpw = codec_mod.measure_bpw(records)
            stego_by_codec[spec.name] = (bpw, _encode(texts, ana_vocab, STEGO, f"stego:{spec.name}:", cfg.max_len))
            stego_steg_ids[spec.name] = [r.tokens for r in records]

    carriers = _encode(carrier_lines, ana_vocab, CARRIER, "carrier:", cfg.max_len)
    reservoir = _encode(reservoir_lines, ana_vocab, CARRIER, "reservoir:", cfg.max_len)
    split_seed = derive_seed(seed, "split")
    splits = {name: split_dataset(carriers + seqs, split_seed) for name, (_, seqs) in stego_by_codec.items()}
    first = splits[codecs[0].name]
    carrier_train = [s for s in first.train if s.label == CARRIER]
    carrier_val = [s for s in first.validation if s.label == CARRIER]
    test_uids = set().union(*({s.uid for s in sp.test} for sp in splits.values()))
    for sp in splits.values():
        if [s.uid for s in sp.train if s.label == CARRIER] != [s.uid for s in carrier_train]:
            raise StageError("split", RuntimeError("carrier split differs across codecs"))

    ana_cfg = cfg.model_config(len(ana_vocab))
    sizes = list(cfg.pretrain_sizes) or [None]
    pretrained = {}
    for size in sizes:
        pool = pretrain_pool(carrier_train, reservoir, size)
        if {s.uid for s in pool} & test_uids:
            raise StageError("leakage", RuntimeError("pre-training texts intersect test texts"))
        tag = len(pool)
        for mode in cfg.pretrain_modes:
            if mode == "none":
                continue
            with _Stage(f"pretrain:{mode}:{tag}"):
                pseed = derive_seed(seed, f"pretrain:{mode}")
                trainer = train_lm if mode == "lm" else train_ae
                h = trainer(pool, carrier_val, ana_cfg, pseed, epochs=cfg.pretrain_epochs,
                            batch_size=cfg.batch_size, lr=cfg.lr)
                path = out / f"pretrain_{mode}_{tag}.ckpt"
                save_checkpoint(path, h.params, pseed, f"{mode}-pretrain", {"pool": tag})
                pretrained[(mode, tag)] = (h.params, _sha(path.read_bytes()), h)
    largest = max(len(pretrain_pool(carrier_train, reservoir, s)) for s in sizes)

    for spec in codecs:
        bpw, _ = stego_by_codec[spec.name]
        sp = splits[spec.name]
        fseed = derive_seed(seed, f"finetune:{spec.name}")
        runs = [("random", None, None, "")]
        runs += [(f"from_{m}", tag, p, ph) for (m, tag), (p, ph, _) in pretrained.items()]
        threshold = None
        for mode, tag, source, src_hash in runs:
            with _Stage(f"finetune:{spec.name}:{mode}:{tag}"):
                clf = init_classifier(mode, ana_cfg, fseed, source)
                h = finetune(clf, sp.train, sp.validation, fseed, epochs=cfg.finetune_epochs,
                             batch_size=cfg.batch_size, lr=cfg.lr, patience=cfg.patience,
                             dropout=cfg.finetune_dropout, run_full=True)
                if mode == "random":
                    k = min(cfg.threshold_epoch, len(h.val_loss) - 1)
                    threshold = h.val_loss[k]
                best = evaluate(classifier_predictor(h.params), sp.test)
                fixed = evaluate(classifier_predictor(h.final_params), sp.test)
                lineage = _sha("|".join([cfg_hash, steg_hash, src_hash, _params_hash(h.params)]).encode())
                if cfg.save_classifiers:
                    save_checkpoint(out / f"clf_{spec.name}_{mode}_{tag or 0}.ckpt", h.params, fseed,
                                    "finetune", {"codec": spec.name, "init": mode})
                res.rows.append({
                    "dataset": cfg.dataset, "codec": spec.name, "bpw": bpw, "init_mode": mode,
                    "pretrain_size": tag if tag is not None else 0, "seed": seed,
                    "acc": best.acc, "f1": best.f1,
                    "epochs_ran": h.stopped_epoch or h.epochs_ran,
                    "epochs_to_threshold": h.epochs_to_reach(threshold),
                    "acc_fixed": fixed.acc, "f1_fixed": fixed.f1,
                    "tp": best.tp, "fp": best.fp, "fn": best.fn, "tn": best.tn,
                    "config_hash": cfg_hash, "lineage": lineage,
                })
                res.curves[(spec.name, mode, tag)] = (h.train_loss, h.val_loss)

        if ("lm", largest) in pretrained:
            with _Stage(f"threshold:{spec.name}"):
                lm, lm_hash, _ = pretrained[("lm", largest)]
                det = fit_threshold(perplexities(lm, sp.validation), [s.label for s in sp.validation])
                test_ppl = perplexities(lm, sp.test)
                rep = evaluate(lambda seqs: det.predict_scores(test_ppl), sp.test)
                res.rows.append({
                    "dataset": cfg.dataset, "codec": spec.name, "bpw": bpw, "init_mode": "ppl_threshold",
                    "pretrain_size": largest, "seed": seed, "acc": rep.acc, "f1": rep.f1,
                    "epochs_ran": 0, "epochs_to_threshold": None, "acc_fixed": rep.acc,
                    "f1_fixed": rep.f1, "tp": rep.tp, "fp": rep.fp, "fn": rep.fn, "tn": rep.tn,
                    "config_hash": cfg_hash,
                    "lineage": _sha("|".join([cfg_hash, steg_hash, lm_hash]).encode()),
                })

    with _Stage("report"):
        _perplexity_figures(cfg, res, seed, steg_lm, steg_vocab, carrier_lines, splits,
                            stego_steg_ids, codecs, ana_cfg, pretrained, largest)
    return res


def _perplexity_figures(cfg, res, seed, steg_lm, steg_vocab, carrier_lines, splits,
                        stego_steg_ids, codecs, ana_cfg, pretrained, largest):
    n = cfg.report_texts
    # steganographer LM view: test carriers vs stego texts at each rate
    first = splits[codecs[0].name]
    test_carrier_idx = [int(s.uid.split(":")[1]) for s in first.test if s.label == CARRIER][:n]
    carriers_steg = _encode([carrier_lines[i] for i in test_carrier_idx], steg_vocab, CARRIER,
                            "carrier:", cfg.max_len)
    labeled = {"carrier": carriers_steg}
    for spec in codecs:
        labeled[spec.name] = stego_steg_ids[spec.name][:n]
    rep = perplexity_report(steg_lm, labeled, cfg.hist_bins)
    width = max(len(c.position_means) for c in rep.classes.values())
    for pos in range(width):
        row = [seed, pos + 1]
        for name in labeled:
            pm = rep.classes[name].position_means
            row.append(float(pm[pos]) if pos < len(pm) else None)
        res.fig1.append(row)
    for b in range(len(rep.bin_edges) - 1):
        res.fig2.append([seed, float(rep.bin_edges[b]), float(rep.bin_edges[b + 1])] +
                        [int(rep.classes[name].counts[b]) for name in labeled])
    for name in labeled:
        if name != "carrier":
            res.auc_rows.append([seed, "steg_lm", name, rep.auc[name], discrimination(rep.auc[name]),
                                 rep.separation[name]])

    # analyst view: carrier-trained LM vs the same LM at its random init
    if ("lm", largest) not in pretrained:
        return
    target = next((c for c in codecs if c.name == "flc-2"), codecs[0])
    sp = splits[target.name]
    test_c = [s for s in sp.test if s.label == CARRIER][:n]
    test_s = [s for s in sp.test if s.label == STEGO][:n]
    models = {"trained": pretrained[("lm", largest)][0],
              "random": ModelParams.init(ana_cfg, derive_seed(seed, "pretrain:lm"), head="lm")}
    reports = {k: perplexity_report(m, {"carrier": test_c, "stego": test_s}, cfg.hist_bins)
               for k, m in models.items()}
    for k, r in reports.items():
        for b in range(len(r.bin_edges) - 1):
            res.fig3.append([seed, k, float(r.bin_edges[b]), float(r.bin_edges[b + 1]),
                             int(r.classes["carrier"].counts[b]), int(r.classes["stego"].counts[b])])
        res.auc_rows.append([seed, f"analyst_{k}", target.name, r.auc["stego"],
                             discrimination(r.auc["stego"]), r.separation["stego"]])


# --------------------------------------------------------------------------
# whole experiment
# --------------------------------------------------------------------------

@dataclass
class RunResult:
    rows: list
    output_dir: Path
    replicates: list


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Run every replicate, then write results.csv, figure TSVs and run_meta.json."""
    validate_config(cfg)
    final = Path(cfg.output_dir)
    tmp = final.with_name(final.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        with _Stage("corpus"):
            if cfg.corpus:
                lines = read_corpus(cfg.corpus)
            else:
                lines = synth_corpus(cfg.seed, cfg.synth_sentences, cfg.synth_mean_len,
                                     cfg.synth_types, cfg.synth_classes, cfg.synth_branching,
                                     zipf=cfg.synth_zipf)
                write_corpus(tmp / "corpus.txt", lines)
        (tmp / "config.cfg").write_text(cfg.to_text())
        reps = []
        for seed in cfg.replicate_seeds():
            reps.append(run_replicate(cfg, lines, seed, tmp / f"seed-{seed}"))
        with _Stage("aggregate"):
            _write_outputs(cfg, tmp, reps)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    tmp.rename(final)
    rows = [r for rep in reps for r in rep.rows]
    return RunResult(rows, final, reps)


def _write_outputs(cfg: ExperimentConfig, out: Path, reps: list) -> None:
    rows = [r for rep in reps for r in rep.rows]
    _write_tsv(out / "results.csv", CSV_COLUMNS, [[r[c] for c in CSV_COLUMNS] for r in rows])
    # the csv uses commas
    text = (out / "results.csv").read_text().replace("\t", ",")
    (out / "results.csv").write_text(text)

    names = ["carrier"] + [codec_mod.CodecSpec.parse(c).name for c in cfg.codecs]
    _write_tsv(out / "fig1.tsv", ["seed", "position"] + [f"mean_perp_{n}" for n in names],
               [r for rep in reps for r in rep.fig1])
    _write_tsv(out / "fig2.tsv", ["seed", "bin_left", "bin_right"] + [f"count_{n}" for n in names],
               [r for rep in reps for r in rep.fig2])
    _write_tsv(out / "fig3.tsv", ["seed", "model", "bin_left", "bin_right", "count_carrier", "count_stego"],
               [r for rep in reps for r in rep.fig3])
    _write_tsv(out / "perplexity_auc.tsv", ["seed", "model", "codec", "auc", "discrimination", "separation"],
               [r for rep in reps for r in rep.auc_rows])

    # fig6: loss per epoch averaged over the codec x rate grid and replicates
    sizes = sorted({k[2] for rep in reps for k in rep.curves if k[2] is not None})
    ref_size = sizes[-1] if sizes else None
    modes = ["random"] + [f"from_{m}" for m in cfg.pretrain_modes if m != "none"]
    header, cols = ["epoch"], []
    for mode in modes:
        tag = None if mode == "random" else ref_size
        series = [rep.curves[k] for rep in reps for k in rep.curves if k[1] == mode and k[2] == tag]
        if not series:
            continue
        width = min(len(s[1]) for s in series)
        val = np.mean([s[1][:width] for s in series], axis=0)
        tr = np.mean([[np.nan] + list(s[0][:width - 1]) for s in series], axis=0)
        header += [f"{mode}_train", f"{mode}_val"]
        cols += [tr, val]
    if cols:
        width = min(len(c) for c in cols)
        _write_tsv(out / "fig6.tsv", header,
                   [[e] + [float(c[e]) for c in cols] for e in range(width)])

    # table1: per (codec, init, pool) means; table2: pretrained accuracy by pool size
    t1 = {}
    for r in rows:
        t1.setdefault((r["codec"], r["init_mode"], r["pretrain_size"]), []).append(r)
    _write_tsv(out / "table1.tsv", ["codec", "bpw", "init_mode", "pretrain_size", "acc", "f1", "replicates"],
               [[k[0], float(np.mean([r["bpw"] for r in v])), k[1], k[2],
                 float(np.mean([r["acc"] for r in v])), float(np.mean([r["f1"] for r in v])), len(v)]
                for k, v in t1.items()])
    t2 = {}
    for r in rows:
        if r["init_mode"].startswith("from_"):
            t2.setdefault((r["init_mode"], r["pretrain_size"]), []).append(r["acc"])
    _write_tsv(out / "table2.tsv", ["init_mode", "pretrain_size", "mean_acc", "n"],
               [[k[0], k[1], float(np.mean(v)), len(v)] for k, v in sorted(t2.items())])

    meta = {
        "config": dataclasses.asdict(cfg), "config_hash": cfg.content_hash(),
        "replicate_seeds": cfg.replicate_seeds(), "deviations": DEVIATIONS,
        "positive_class": "stego", "tie_rule": "p=0.5 -> carrier",
        "clip_norm": 5.0, "seed_derivation": "sub = SplitMix64(master XOR sha256(tag)[:8])",
        "replicates": {str(rep.seed): rep.meta for rep in reps},
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True, default=float) + "\n")
