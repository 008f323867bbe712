"""Command-line front end for the whole toolkit.

Subcommands: ingest, train, generate, eval (quality | diversity |
consistency | acceptability), sweep, fit, trace, nli, story. Global
options ``--config`` (a JSON file of option values), ``--seed``,
``--out-dir``, and ``--workers`` apply everywhere; any flag given on the
command line overrides the config file, which overrides the built-in
default. Exit codes: 0 success, 2 configuration error, 3 data error.

Config file keys use the flag names with underscores, in one flat
object shared by all subcommands; keys a subcommand does not use are
ignored. Artifacts never embed absolute paths or timestamps, so two
runs from one config produce byte-identical output trees.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from types import SimpleNamespace

from ..consistency import (
    load_stories,
    load_triples,
    save_selection_result,
    selection_accuracy,
)
from ..corpus import (
    TokenSequence,
    Vocab,
    build_pair_datasets,
    encode,
    read_ids_file,
    load_splits,
    save_splits,
    segment_sentences,
    split_corpus,
    surface_tokens,
    tfidf_scores,
    tokenize,
    vocab_from_manifest,
)
from ..decode import STRATEGIES, DecoderConfig, generate
from ..errors import AlignmentError, ConfigError, DataError, EmptyInput
from ..lm.base import token_prob_trace
from ..lm.ffn import FeedForwardLM
from ..lm.ngram import ngram_fit
from ..lm.store import load_model, save_model
from ..losses import (
    SeqUlConfig,
    TrainConfig,
    TrainData,
    Trainer,
    align_labels,
    label_vocab,
    labels_to_ids,
    load_label_file,
)
from ..metrics import (
    BleuConfig,
    Sample,
    SampleSet,
    acceptability_penlp,
    corpus_bleu,
    forward_ppl,
    mean_seq_rep,
    reverse_ppl,
    self_bleu,
)
from .samples import load_sample_set, save_sample_set, write_metric_report
from .sweep import (
    SweepConfig,
    SWEEP_METRICS,
    read_sweep_csv,
    reference_set,
    run_sweep,
    sample_seed,
    tradeoff_table,
    write_tradeoff,
)

_STRATEGY_ALIASES = {"temp": "temperature"}

# Built-in defaults per subcommand; a key must appear here for the
# config file to be allowed to set it.
_GLOBALS = {"seed": 0, "out_dir": ".", "workers": 1}
DEFAULTS: dict[str, dict] = {
    "ingest": {
        **_GLOBALS,
        "input": None,
        "format": "text",
        "scheme": "word",
        "seq_len": 100,
        "ratios": "0.8,0.1,0.1",
    },
    "train": {
        **_GLOBALS,
        "manifest": None,
        "backend": "ffn",
        "model_out": None,
        "order": 2,
        "k_s": 1.0,
        "context": 8,
        "embed_dim": 32,
        "hidden_dim": 64,
        "epochs": None,
        "batch_size": None,
        "learning_rate": None,
        "margin": None,
        "objectives": None,
        "train_config": None,
        "mix_prob": None,
        "ul_prefix_len": None,
        "ul_gen_len": None,
        "ul_ngram": None,
        "pairs_text": None,
        "pairs_count": 200,
        "labels": None,
        "doc_len": None,
    },
    "generate": {
        **_GLOBALS,
        "model": None,
        "manifest": None,
        "split": "train",
        "strategy": "greedy",
        "b": None,
        "t": None,
        "k": None,
        "p": None,
        "theta": None,
        "prefix_len": 50,
        "gen_len": 100,
        "n_prefixes": None,
        "samples_out": None,
    },
    "eval": {
        **_GLOBALS,
        "kind": None,
        "samples": None,
        "manifest": None,
        "model": None,
        "triples": None,
        "stories": None,
        "sentences": None,
        "scheme": "word",
        "alpha": 0.6,
        "prefix_len": None,
        "gen_len": None,
        "max_n": 4,
        "subsample": None,
        "subsample_seed": 0,
        "fwd_order": 2,
        "fwd_k_s": 1.0,
        "rev_order": 2,
        "rev_k_s": 1.0,
    },
    "sweep": {
        **_GLOBALS,
        "manifest": None,
        "models": None,
        "strategies": None,
        "prefix_len": 50,
        "gen_len": 100,
        "n_prefixes": None,
        "metrics": ",".join(SWEEP_METRICS),
        "max_n": 4,
        "subsample": None,
        "subsample_seed": 0,
        "fwd_order": 2,
        "fwd_k_s": 1.0,
        "rev_order": 2,
        "rev_k_s": 1.0,
    },
    "fit": {
        **_GLOBALS,
        "csv": None,
        "quality": "corpus_bleu",
        "diversity": "self_bleu",
    },
    "trace": {
        **_GLOBALS,
        "model": None,
        "ids": None,
        "text": None,
        "scheme": "word",
        "context_ids": None,
        "truncate": None,
        "trace_out": None,
    },
    "nli": {**_GLOBALS, "model": None, "triples": None, "scheme": "word", "report": None},
    "story": {**_GLOBALS, "model": None, "stories": None, "scheme": "word", "report": None},
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genteval",
        description="Evaluate language models on open-ended generation: "
        "quality, diversity, and consistency.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option values")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--workers", type=int)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="tokenize and split a corpus")
    p.add_argument("--input")
    p.add_argument("--format", choices=("text", "ids"))
    p.add_argument("--scheme", choices=("word", "char"))
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--ratios", help="train,dev,test fractions, e.g. 0.8,0.1,0.1")

    p = sub.add_parser("train", parents=[common], help="train an n-gram or feed-forward LM")
    p.add_argument("--manifest")
    p.add_argument("--backend", choices=("ffn", "ngram"))
    p.add_argument("--model-out", dest="model_out")
    p.add_argument("--order", type=int, help="n-gram order")
    p.add_argument("--k-s", dest="k_s", type=float, help="n-gram add-k smoothing")
    p.add_argument("--context", type=int, help="ffn window size")
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--objectives", help='e.g. "mle:1.0,ul:0.5"')
    p.add_argument("--train-config", dest="train_config", help="TrainConfig JSON file")
    p.add_argument("--mix-prob", dest="mix_prob", type=float)
    p.add_argument("--ul-prefix-len", dest="ul_prefix_len", type=int)
    p.add_argument("--ul-gen-len", dest="ul_gen_len", type=int)
    p.add_argument("--ul-ngram", dest="ul_ngram", type=int)
    p.add_argument("--pairs-text", dest="pairs_text", help="raw text for nsp/sop pairs")
    p.add_argument("--pairs-count", dest="pairs_count", type=int)
    p.add_argument("--labels", help="TSV label file for pos/dp")
    p.add_argument("--doc-len", dest="doc_len", type=int, help="tf-idf document length")

    p = sub.add_parser("generate", parents=[common], help="decode continuations into a sample file")
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--split", choices=("train", "dev", "test"))
    p.add_argument("--strategy")
    p.add_argument("--b", type=int)
    p.add_argument("--t", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--prefix-len", dest="prefix_len", type=int)
    p.add_argument("--gen-len", dest="gen_len", type=int)
    p.add_argument("--n-prefixes", dest="n_prefixes", type=int)
    p.add_argument("--samples-out", dest="samples_out")

    p = sub.add_parser("eval", parents=[common], help="score samples or datasets")
    p.add_argument("kind", choices=("quality", "diversity", "consistency", "acceptability"))
    p.add_argument("--samples", help="generated SampleSet JSONL")
    p.add_argument("--manifest")
    p.add_argument("--model")
    p.add_argument("--triples")
    p.add_argument("--stories")
    p.add_argument("--sentences", help="file of sentences for acceptability, one per line")
    p.add_argument("--scheme", choices=("word", "char"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--prefix-len", dest="prefix_len", type=int)
    p.add_argument("--gen-len", dest="gen_len", type=int)
    p.add_argument("--max-n", dest="max_n", type=int)
    p.add_argument("--subsample", type=int)
    p.add_argument("--subsample-seed", dest="subsample_seed", type=int)
    p.add_argument("--fwd-order", dest="fwd_order", type=int)
    p.add_argument("--fwd-k-s", dest="fwd_k_s", type=float)
    p.add_argument("--rev-order", dest="rev_order", type=int)
    p.add_argument("--rev-k-s", dest="rev_k_s", type=float)

    p = sub.add_parser("sweep", parents=[common], help="run the model x strategy x param grid")
    p.add_argument("--manifest")
    p.add_argument("--models", help='e.g. "mle=out/mle.lmek,ul=out/ul.lmek"')
    p.add_argument("--strategies", help='e.g. "greedy;topp:0.2,0.9;topk:2,10"')
    p.add_argument("--prefix-len", dest="prefix_len", type=int)
    p.add_argument("--gen-len", dest="gen_len", type=int)
    p.add_argument("--n-prefixes", dest="n_prefixes", type=int)
    p.add_argument("--metrics")
    p.add_argument("--max-n", dest="max_n", type=int)
    p.add_argument("--subsample", type=int)
    p.add_argument("--subsample-seed", dest="subsample_seed", type=int)
    p.add_argument("--fwd-order", dest="fwd_order", type=int)
    p.add_argument("--fwd-k-s", dest="fwd_k_s", type=float)
    p.add_argument("--rev-order", dest="rev_order", type=int)
    p.add_argument("--rev-k-s", dest="rev_k_s", type=float)

    p = sub.add_parser("fit", parents=[common], help="fit the quality-diversity trade-off curves")
    p.add_argument("--csv", help="sweep.csv from a finished sweep")
    p.add_argument("--quality")
    p.add_argument("--diversity")

    p = sub.add_parser("trace", parents=[common], help="per-token probability trace as CSV")
    p.add_argument("--model")
    p.add_argument("--ids", help='space-separated token ids, e.g. "4 1 7"')
    p.add_argument("--text", help="text to encode with --scheme against the model vocab")
    p.add_argument("--scheme", choices=("word", "char"))
    p.add_argument("--context-ids", dest="context_ids")
    p.add_argument("--truncate", help='"topk:K" or "topp:P"')
    p.add_argument("--trace-out", dest="trace_out")

    p = sub.add_parser("nli", parents=[common], help="entailed-vs-contradicting selection accuracy")
    p.add_argument("--model")
    p.add_argument("--triples")
    p.add_argument("--scheme", choices=("word", "char"))
    p.add_argument("--report")

    p = sub.add_parser("story", parents=[common], help="story-ending selection accuracy")
    p.add_argument("--model")
    p.add_argument("--stories")
    p.add_argument("--scheme", choices=("word", "char"))
    p.add_argument("--report")

    return parser


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return data


def _resolve(args: argparse.Namespace, config: dict, command: str) -> SimpleNamespace:
    """Merge per-key: CLI flag > config file > built-in default."""
    merged = {}
    for key, default in DEFAULTS[command].items():
        value = getattr(args, key, None)
        if value is None:
            value = config.get(key, default)
        merged[key] = value
    return SimpleNamespace(**merged)


def _require(opt: SimpleNamespace, *names: str) -> None:
    for name in names:
        if getattr(opt, name) is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required")


def _out_dir(opt: SimpleNamespace) -> Path:
    out = Path(opt.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = text.split(",") if isinstance(text, str) else list(text)
    if len(parts) != 3:
        raise ConfigError("ratios must be three comma-separated numbers")
    return tuple(float(x) for x in parts)


def _parse_id_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad id list {text!r}") from None


def _strategy_name(name: str) -> str:
    name = _STRATEGY_ALIASES.get(name, name)
    if name not in STRATEGIES:
        raise ConfigError(f"unknown strategy {name!r}")
    return name


def _parse_strategies(raw) -> tuple[tuple[str, tuple], ...]:
    """Accept "greedy;topp:0.2,0.9" or the equivalent list-of-pairs."""
    if isinstance(raw, str):
        out = []
        for part in raw.split(";"):
            part = part.strip()
            if not part:
                continue
            name, _, params = part.partition(":")
            name = _strategy_name(name.strip())
            if not params:
                out.append((name, (None,)))
            else:
                cast = int if name in ("beam", "topk") else float
                out.append((name, tuple(cast(x) for x in params.split(","))))
        return tuple(out)
    out = []
    for name, params in raw:
        name = _strategy_name(name)
        cast = int if name in ("beam", "topk") else float
        out.append((name, tuple(None if x is None else cast(x) for x in params)))
    return tuple(out)


def _parse_models(raw) -> dict[str, str]:
    """Accept "name=path,..." / "path,..." or a dict / list from config."""
    if isinstance(raw, dict):
        return {str(k): str(v) for k, v in raw.items()}
    if isinstance(raw, str):
        entries = [e.strip() for e in raw.split(",") if e.strip()]
    else:
        entries = [str(e) for e in raw]
    mapping = {}
    for entry in entries:
        if "=" in entry:
            name, _, path = entry.partition("=")
        else:
            name, path = Path(entry).stem, entry
        if name in mapping:
            raise ConfigError(f"duplicate model name {name!r}")
        mapping[name] = path
    return mapping


def _parse_objectives(raw) -> tuple[tuple[str, float], ...]:
    if not isinstance(raw, str):
        return tuple((kind, float(w)) for kind, w in raw)
    out = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        kind, _, weight = part.partition(":")
        out.append((kind.strip(), float(weight) if weight else 1.0))
    return tuple(out)


def _manifest_scheme(manifest: dict) -> tuple[str, Vocab]:
    tok = manifest["tokenizer"]
    vocab = vocab_from_manifest(manifest)
    scheme = tok.get("scheme", "external")
    return scheme, vocab


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_ingest(opt: SimpleNamespace) -> int:
    _require(opt, "input")
    out = _out_dir(opt)
    if opt.format == "ids":
        sequences, vocab_size = read_ids_file(opt.input)
        flat = tuple(i for seq in sequences for i in seq)
        if not flat:
            raise DataError(f"{opt.input}: no token ids")
        corpus = TokenSequence(flat, Vocab.placeholder(vocab_size))
        tokenizer = {"scheme": "external", "vocab_size": vocab_size}
    else:
        text = Path(opt.input).read_text(encoding="utf-8")
        corpus, vocab = tokenize(text, opt.scheme)
        tokenizer = {"scheme": opt.scheme, "vocab": list(vocab.tokens)}
    splits = split_corpus(corpus, opt.seq_len, _parse_ratios(opt.ratios))
    manifest_path = save_splits(out, splits, tokenizer, opt.seed)
    counts = splits.counts
    print(f"splits: train={counts[0]} dev={counts[1]} test={counts[2]}")
    print(f"manifest: {manifest_path}")
    return 0


def _build_train_config(opt: SimpleNamespace) -> TrainConfig:
    base = TrainConfig.from_json(opt.train_config) if opt.train_config else TrainConfig()
    objectives = _parse_objectives(opt.objectives) if opt.objectives is not None else None
    seq_ul = None
    ul_overrides = {
        "mix_prob": opt.mix_prob,
        "prefix_len": opt.ul_prefix_len,
        "gen_len": opt.ul_gen_len,
        "ngram": opt.ul_ngram,
    }
    if any(v is not None for v in ul_overrides.values()):
        current = base.seq_ul
        seq_ul = SeqUlConfig(
            mix_prob=ul_overrides["mix_prob"] if ul_overrides["mix_prob"] is not None else current.mix_prob,
            prefix_len=ul_overrides["prefix_len"] if ul_overrides["prefix_len"] is not None else current.prefix_len,
            gen_len=ul_overrides["gen_len"] if ul_overrides["gen_len"] is not None else current.gen_len,
            ngram=ul_overrides["ngram"] if ul_overrides["ngram"] is not None else current.ngram,
        )
    return base.override(
        epochs=opt.epochs,
        batch_size=opt.batch_size,
        learning_rate=opt.learning_rate,
        margin=opt.margin,
        objectives=objectives,
        seq_ul=seq_ul,
    )


def _pair_items(opt, splits, scheme: str, vocab: Vocab, mode: str):
    if opt.pairs_text is None:
        raise ConfigError(f"objective {mode!r} needs --pairs-text")
    if scheme == "external":
        raise ConfigError("nsp/sop need a manifest with a text tokenizer")
    text = Path(opt.pairs_text).read_text(encoding="utf-8")
    sentences = []
    for sent in segment_sentences(text):
        try:
            sentences.append(encode(sent, vocab, scheme, on_oov="skip"))
        except EmptyInput:
            continue
    return tuple(build_pair_datasets(sentences, mode, opt.pairs_count, opt.seed))


def _tfidf_items(opt, splits, vocab: Vocab):
    doc_len = opt.doc_len if opt.doc_len is not None else splits.seq_len
    flat = tuple(i for s in splits.train for i in s.ids)
    table = tfidf_scores(TokenSequence(flat, vocab), doc_len)
    targets = table.position_targets(flat)
    items = []
    for c, seq in enumerate(splits.train):
        lo, hi = c * splits.seq_len, (c + 1) * splits.seq_len
        if hi <= len(targets):
            items.append((seq, tuple(targets[lo:hi])))
    return tuple(items)


def _label_items(opt, scheme: str, vocab: Vocab):
    if opt.labels is None:
        raise ConfigError("objectives pos/dp need --labels")
    if scheme == "external":
        raise ConfigError("pos/dp need a manifest with a text tokenizer")
    sentences = load_label_file(opt.labels)
    table = label_vocab(sentences)
    items = []
    skipped = 0
    for sent in sentences:
        word_tokens = [(surface, label) for surface, label, _ in sent]
        model_surfaces = surface_tokens(" ".join(w for w, _, _ in sent), scheme)
        try:
            aligned = align_labels(word_tokens, model_surfaces)
        except AlignmentError:
            skipped += 1
            continue
        if any(s not in vocab for s in model_surfaces):
            skipped += 1
            continue
        label_ids = labels_to_ids(aligned, table)
        if all(lab is None for lab in label_ids):
            skipped += 1
            continue
        ids = tuple(vocab.id_of(s) for s in model_surfaces)
        items.append((TokenSequence(ids, vocab), tuple(label_ids)))
    if not items:
        raise DataError(f"{opt.labels}: no usable labeled sentences")
    if skipped:
        print(f"labels: skipped {skipped} sentences (alignment or vocab)", file=sys.stderr)
    return tuple(items), len(table)


def _cmd_train(opt: SimpleNamespace) -> int:
    _require(opt, "manifest")
    out = _out_dir(opt)
    splits, manifest = load_splits(opt.manifest)
    scheme, vocab = _manifest_scheme(manifest)
    model_out = Path(opt.model_out) if opt.model_out else out / "model.lmek"

    if opt.backend == "ngram":
        model = ngram_fit(list(splits.train), order=opt.order, k_s=opt.k_s, vocab=vocab)
        save_model(model, model_out)
        print(f"model: {model_out}")
        return 0

    cfg = _build_train_config(opt)
    active = {kind for kind, weight in cfg.objectives if weight > 0}
    if "pos" in active and "dp" in active:
        raise ConfigError("pos and dp share the classification head; train one at a time")

    data_kwargs: dict = {"sequences": splits.train}
    n_labels = 0
    for mode in ("nsp", "sop"):
        if mode in active:
            data_kwargs[mode] = _pair_items(opt, splits, scheme, vocab, mode)
    if "tfidf" in active:
        data_kwargs["tfidf"] = _tfidf_items(opt, splits, vocab)
    for kind in ("pos", "dp"):
        if kind in active:
            data_kwargs[kind], n_labels = _label_items(opt, scheme, vocab)

    model = FeedForwardLM.init(
        vocab,
        context=opt.context,
        embed_dim=opt.embed_dim,
        hidden_dim=opt.hidden_dim,
        seed=opt.seed,
        n_labels=n_labels,
        regression="tfidf" in active,
    )
    trainer = Trainer(model, cfg, seed=opt.seed)
    history = trainer.fit(TrainData(**data_kwargs))
    with open(out / "train_history.json", "w", encoding="utf-8") as f:
        json.dump(history, f, sort_keys=True, indent=2)
        f.write("\n")
    save_model(model, model_out)
    print(f"model: {model_out}")
    print(f"steps: {len(history)}  final total loss: {history[-1]['total']:.6f}")
    return 0


def _cmd_generate(opt: SimpleNamespace) -> int:
    _require(opt, "model", "manifest")
    out = _out_dir(opt)
    model = load_model(opt.model)
    splits, _ = load_splits(opt.manifest)
    sequences = getattr(splits, opt.split)
    if opt.n_prefixes is not None:
        sequences = sequences[: opt.n_prefixes]
    if not sequences:
        raise DataError(f"split {opt.split!r} has no sequences")
    strategy = _strategy_name(opt.strategy)
    kwargs = {
        name: getattr(opt, name)
        for name in ("b", "t", "k", "p", "theta")
        if getattr(opt, name) is not None
    }
    model_name = Path(opt.model).stem
    param = DecoderConfig(strategy=strategy, max_len=opt.gen_len, **kwargs).param
    samples = []
    for i, seq in enumerate(sequences):
        prefix = seq.window(0, opt.prefix_len)
        dcfg = DecoderConfig(
            strategy=strategy,
            max_len=opt.gen_len,
            seed=sample_seed(opt.seed, model_name, strategy, param, i),
            **kwargs,
        )
        samples.append(Sample(id=str(i), prefix=prefix, continuation=generate(model, prefix, dcfg)))
    sset = SampleSet(
        tuple(samples),
        {"model": model_name, "strategy": strategy, "param": param, "seed": opt.seed},
    )
    samples_out = Path(opt.samples_out) if opt.samples_out else out / "samples.jsonl"
    save_sample_set(samples_out, sset)
    print(f"samples: {samples_out} ({len(samples)} continuations)")
    return 0


def _eval_inputs(opt: SimpleNamespace):
    _require(opt, "samples", "manifest")
    gen = load_sample_set(opt.samples)
    splits, _ = load_splits(opt.manifest)
    first = gen.samples[0]
    prefix_len = opt.prefix_len if opt.prefix_len is not None else (
        len(first.prefix) if first.prefix else 1
    )
    gen_len = opt.gen_len if opt.gen_len is not None else len(first.continuation)
    refs = reference_set(splits, prefix_len, gen_len)
    provenance = dict(gen.provenance)
    provenance["samples"] = Path(opt.samples).name
    return gen, splits, refs, provenance


def _cmd_eval(opt: SimpleNamespace) -> int:
    out = _out_dir(opt)
    if opt.kind == "quality":
        gen, splits, refs, provenance = _eval_inputs(opt)
        bleu_cfg = BleuConfig(
            max_n=opt.max_n, subsample=opt.subsample, subsample_seed=opt.subsample_seed
        )
        value = corpus_bleu(gen, refs, bleu_cfg)
        write_metric_report(
            out / "report_corpus_bleu.json",
            "corpus_bleu",
            value,
            {"max_n": opt.max_n, "subsample": opt.subsample, "subsample_seed": opt.subsample_seed},
            provenance,
            len(gen),
        )
        print(f"corpus_bleu: {value:.6f}")
        scorer = ngram_fit(list(splits.train), order=opt.fwd_order, k_s=opt.fwd_k_s)
        fwd = forward_ppl(scorer, gen)
        write_metric_report(
            out / "report_forward_ppl.json",
            "forward_ppl",
            fwd,
            {"order": opt.fwd_order, "k_s": opt.fwd_k_s},
            provenance,
            len(gen),
        )
        print(f"forward_ppl: {fwd:.6f}")
        return 0
    if opt.kind == "diversity":
        gen, splits, refs, provenance = _eval_inputs(opt)
        bleu_cfg = BleuConfig(
            max_n=opt.max_n, subsample=opt.subsample, subsample_seed=opt.subsample_seed
        )
        value = self_bleu(gen, bleu_cfg)
        write_metric_report(
            out / "report_self_bleu.json",
            "self_bleu",
            value,
            {"max_n": opt.max_n, "subsample": opt.subsample, "subsample_seed": opt.subsample_seed},
            provenance,
            len(gen),
        )
        print(f"self_bleu: {value:.6f}")
        mean, nulls = mean_seq_rep(gen, 4)
        write_metric_report(
            out / "report_seq_rep_4.json",
            "seq_rep_4",
            mean,
            {"n": 4},
            provenance,
            len(gen),
            nulls_excluded=nulls,
        )
        print(f"seq_rep_4: {'null' if mean is None else f'{mean:.6f}'}")
        rev = reverse_ppl(gen, refs, order=opt.rev_order, k_s=opt.rev_k_s)
        write_metric_report(
            out / "report_reverse_ppl.json",
            "reverse_ppl",
            rev,
            {"order": opt.rev_order, "k_s": opt.rev_k_s},
            provenance,
            len(gen),
        )
        print(f"reverse_ppl: {rev:.6f}")
        return 0
    if opt.kind == "consistency":
        if (opt.triples is None) == (opt.stories is None):
            raise ConfigError("eval consistency needs exactly one of --triples/--stories")
        if opt.triples is not None:
            return _run_selection(opt, opt.triples, load_triples, Path(opt.out_dir) / "report_nli.json")
        return _run_selection(opt, opt.stories, load_stories, Path(opt.out_dir) / "report_story.json")
    # acceptability
    _require(opt, "model", "sentences")
    model = load_model(opt.model)
    scores = []
    nulls = 0
    rows = []
    with open(opt.sentences, encoding="utf-8") as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines:
        raise DataError(f"{opt.sentences}: no sentences")
    for i, line in enumerate(lines):
        try:
            seq = encode(line, model.vocab, opt.scheme, on_oov="skip")
        except EmptyInput:
            nulls += 1
            rows.append({"index": i, "penlp": None, "n_tokens": 0})
            continue
        value = acceptability_penlp(model, seq, alpha=opt.alpha)
        scores.append(value)
        rows.append({"index": i, "penlp": value, "n_tokens": len(seq)})
    items_path = out / "acceptability.items.jsonl"
    with open(items_path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    mean = sum(scores) / len(scores) if scores else None
    write_metric_report(
        out / "report_acceptability.json",
        "acceptability",
        mean,
        {"alpha": opt.alpha, "scheme": opt.scheme},
        {"model": Path(opt.model).stem, "sentences": Path(opt.sentences).name},
        len(lines),
        nulls_excluded=nulls,
    )
    print(f"acceptability: {'null' if mean is None else f'{mean:.6f}'} ({items_path})")
    return 0


def _cmd_sweep(opt: SimpleNamespace) -> int:
    _require(opt, "manifest", "models", "strategies")
    out = _out_dir(opt)
    splits, _ = load_splits(opt.manifest)
    mapping = _parse_models(opt.models)
    metrics = opt.metrics
    if isinstance(metrics, str):
        metrics = tuple(m.strip() for m in metrics.split(",") if m.strip())
    cfg = SweepConfig(
        models=tuple(mapping),
        strategies=_parse_strategies(opt.strategies),
        prefix_len=opt.prefix_len,
        gen_len=opt.gen_len,
        n_prefixes=opt.n_prefixes,
        seed=opt.seed,
        metrics=tuple(metrics),
        max_n=opt.max_n,
        subsample=opt.subsample,
        subsample_seed=opt.subsample_seed,
        rev_order=opt.rev_order,
        rev_k_s=opt.rev_k_s,
        fwd_order=opt.fwd_order,
        fwd_k_s=opt.fwd_k_s,
    )
    records = run_sweep(cfg, splits, out, models=mapping, workers=opt.workers)
    failed = [r for r in records if r.failed]
    print(f"sweep: {len(records)} cells, {len(failed)} failed -> {out / 'sweep.csv'}")
    for r in failed:
        print(f"failed cell {r.model}/{r.strategy}/{r.param}: {r.failed}", file=sys.stderr)
    return 0


def _cmd_fit(opt: SimpleNamespace) -> int:
    _require(opt, "csv")
    out = _out_dir(opt)
    records = read_sweep_csv(opt.csv)
    table = tradeoff_table(records, opt.quality, opt.diversity)
    write_tradeoff(table, out / "tradeoff.csv", out / "fits.json")
    for model, fit in sorted(table.fits.items()):
        if fit is None:
            print(f"{model}: fit degenerate (too few usable points)")
        else:
            print(f"{model}: y = {fit.a:.6f} * ln(x) + {fit.b:.6f}  (residual {fit.residual_sum:.6f})")
    print(f"tradeoff: {out / 'tradeoff.csv'}")
    return 0


def _parse_truncation(raw: str | None) -> tuple[str, float] | None:
    if raw is None:
        return None
    mode, _, value = raw.partition(":")
    if mode not in ("topk", "topp") or not value:
        raise ConfigError('truncation must be "topk:K" or "topp:P"')
    return (mode, int(value) if mode == "topk" else float(value))


def _cmd_trace(opt: SimpleNamespace) -> int:
    _require(opt, "model")
    out = _out_dir(opt)
    model = load_model(opt.model)
    if (opt.ids is None) == (opt.text is None):
        raise ConfigError("trace needs exactly one of --ids/--text")
    if opt.ids is not None:
        ids = _parse_id_list(opt.ids)
        seq = TokenSequence(ids, model.vocab)
    else:
        seq = encode(opt.text, model.vocab, opt.scheme, on_oov="error")
    context = _parse_id_list(opt.context_ids) if opt.context_ids else ()
    trace = token_prob_trace(model, seq, _parse_truncation(opt.truncate), context)
    trace_out = Path(opt.trace_out) if opt.trace_out else out / "trace.csv"
    with open(trace_out, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["position", "token_id", "token", "prob", "truncated_prob"])
        for pos, entry in enumerate(trace.entries):
            writer.writerow(
                [pos, entry.token, model.vocab.tokens[entry.token],
                 repr(entry.prob), repr(entry.truncated_prob)]
            )
    print(f"trace: {trace_out} ({len(trace)} positions)")
    return 0


def _run_selection(opt: SimpleNamespace, data_path: str, loader, report_path: Path) -> int:
    _require(opt, "model")
    model = load_model(opt.model)
    loaded = loader(data_path)
    result = selection_accuracy(
        model,
        loaded.records,
        lambda text: encode(text, model.vocab, opt.scheme, on_oov="skip"),
    )
    report_path.parent.mkdir(parents=True, exist_ok=True)
    save_selection_result(result, report_path, loaded.issues)
    print(
        f"accuracy: {result.accuracy:.4f} over {result.n} items "
        f"({result.ties} ties, {len(loaded.issues)} skipped lines)"
    )
    print(f"report: {report_path}")
    return 0


def _cmd_nli(opt: SimpleNamespace) -> int:
    _require(opt, "triples")
    report = Path(opt.report) if opt.report else _out_dir(opt) / "nli_report.json"
    return _run_selection(opt, opt.triples, load_triples, report)


def _cmd_story(opt: SimpleNamespace) -> int:
    _require(opt, "stories")
    report = Path(opt.report) if opt.report else _out_dir(opt) / "story_report.json"
    return _run_selection(opt, opt.stories, load_stories, report)


_COMMANDS = {
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "fit": _cmd_fit,
    "trace": _cmd_trace,
    "nli": _cmd_nli,
    "story": _cmd_story,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        opt = _resolve(args, config, args.command)
        return _COMMANDS[args.command](opt)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
