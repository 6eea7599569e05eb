"""Batch command-line entry points for the full pipeline.

Every command takes an optional --config TOML/JSON file whose keys mirror the
long option names (dashes or underscores); explicit command-line flags
override file values. All randomness flows from explicit seeds, so any
command is reproducible byte-for-byte given the same config.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from dataclasses import asdict
from functools import wraps
from pathlib import Path

import click

from .corpus import (
    SongDocument,
    WordlistScorer,
    build_line_frequencies,
    doc_from_json,
    doc_to_json,
    load_corpus,
    load_corpus_dir,
    render_song,
    save_corpus,
)
from .decoder import DecodeParams, OracleModel
from .lm import (
    LanguageModel,
    LMConfig,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .metrics import consistency_matrices
from .pipeline import (
    GenerationRecord,
    generate_documents,
    generation_report,
    granularity_ppls,
    infill_documents,
    infill_report,
    make_generation_dataset,
    make_infilling_dataset,
    preprocess_corpus,
)
from .planner import PAD, Granularity, Layout, SyllablePair
from .syllables import load_exceptions
from .synth import generate_corpus
from .tokenizer import load_vocab, save_vocab, train_vocab


class ConfigError(click.ClickException):
    exit_code = 2


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".json"):
        return json.loads(text)
    import tomllib

    return tomllib.loads(text)


def _apply_config(ctx: click.Context, config: dict, values: dict) -> dict:
    """File values fill in parameters the command line left at their default."""
    merged = dict(values)
    normalized = {k.replace("-", "_"): v for k, v in config.items()}
    for key, value in normalized.items():
        if key not in merged:
            raise ConfigError(f"unknown config key: {key}")
        source = ctx.get_parameter_source(key)
        if source is not None and source.name == "DEFAULT":
            merged[key] = value
    return merged


def _require(opts: dict, *keys: str) -> None:
    missing = [k for k in keys if not opts.get(k)]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise ConfigError(f"missing required option(s): {flags}")


def _fail_json(error: Exception) -> None:
    payload = {"error": type(error).__name__, "message": str(error)}
    click.echo(json.dumps(payload), err=True)
    sys.exit(2)


def command_errors(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except Exception as error:  # surfaced module errors
            _fail_json(error)

    return wrapper


@click.group()
def main() -> None:
    """Syllable-controlled lyrics generation and infilling."""


def _common(fn):
    fn = click.option("--config", default=None, help="TOML/JSON config file.")(fn)
    return fn


def _load_docs(corpus: str, exceptions: str | None = None) -> list[SongDocument]:
    table = load_exceptions(exceptions) if exceptions else None
    path = Path(corpus)
    if path.is_dir():
        return load_corpus_dir(path, table)
    return load_corpus(path)


def _load_model(model: str, vocab):
    if model == "oracle":
        return OracleModel(vocab)
    lm, vocab_hash = load_checkpoint(model)
    if vocab_hash and vocab_hash != vocab.content_hash():
        raise ConfigError("checkpoint was trained with a different vocabulary")
    return lm


def _decode_params(kwargs: dict) -> DecodeParams:
    return DecodeParams(
        top_k=kwargs["top_k"],
        top_p=kwargs["top_p"],
        temperature=kwargs["temperature"],
        repetition_penalty=kwargs["repetition_penalty"],
        max_tokens_per_segment=kwargs["max_tokens_per_segment"],
        seed=kwargs["seed"],
    )


def _decode_options(fn):
    fn = click.option("--top-k", default=20, show_default=True)(fn)
    fn = click.option("--top-p", default=0.9, show_default=True)(fn)
    fn = click.option("--temperature", default=1.0, show_default=True)(fn)
    fn = click.option("--repetition-penalty", default=1.2, show_default=True)(fn)
    fn = click.option("--max-tokens-per-segment", default=None, type=int)(fn)
    return fn


@main.command("synth-corpus")
@_common
@click.option("--out", default=None, help="Output corpus JSONL.")
@click.option("--songs", default=5000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--txt-dir", default=None, help="Also write one bracketed .txt per song.")
@command_errors
@click.pass_context
def cmd_synth_corpus(ctx, config, **kwargs):
    """Generate the bundled synthetic toy corpus."""
    opts = _apply_config(ctx, _load_config(config), kwargs)
    _require(opts, "out")
    docs = generate_corpus(opts["songs"], opts["seed"])
    save_corpus(docs, opts["out"])
    if opts["txt_dir"]:
        directory = Path(opts["txt_dir"])
        directory.mkdir(parents=True, exist_ok=True)
        for doc in docs:
            (directory / f"{doc.id}.txt").write_text(render_song(doc), encoding="utf-8")
    click.echo(json.dumps({"songs": len(docs), "out": opts["out"]}))


@main.command("preprocess")
@_common
@click.option("--corpus", default=None, help="Corpus JSONL file or directory of .txt songs.")
@click.option("--out-dir", default=None)
@click.option("--ratios", default="0.9,0.05,0.05", show_default=True)
@click.option("--seed", default=11, show_default=True)
@click.option("--wordlist", default=None, help="Blocked wordlist for the toxicity gate.")
@click.option("--exceptions", default=None, help="Syllable exception dictionary.")
@command_errors
@click.pass_context
def cmd_preprocess(ctx, config, **kwargs):
    """Filter, annotate, and split a corpus into train/valid/eval JSONL."""
    opts = _apply_config(ctx, _load_config(config), kwargs)
    _require(opts, "corpus", "out_dir")
    docs = _load_docs(opts["corpus"], opts["exceptions"])
    ratios = tuple(float(r) for r in str(opts["ratios"]).split(","))
    if len(ratios) != 3:
        raise ConfigError("ratios must have three comma-separated values")
    scorer = WordlistScorer.from_file(opts["wordlist"]) if opts["wordlist"] else None
    train_docs, valid_docs, eval_docs, stats = preprocess_corpus(
        docs, ratios, opts["seed"], scorer
    )
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(train_docs, out / "train.jsonl")
    save_corpus(valid_docs, out / "valid.jsonl")
    save_corpus(eval_docs, out / "eval.jsonl")
    (out / "stats.json").write_text(json.dumps(asdict(stats), indent=2))
    click.echo(json.dumps(asdict(stats)))


@main.command("train-vocab")
@_common
@click.option("--corpus", default=None)
@click.option("--size", default=8192, show_default=True)
@click.option("--out", default=None)
@command_errors
@click.pass_context
def cmd_train_vocab(ctx, config, **kwargs):
    """Train the byte-level BPE vocabulary."""
    opts = _apply_config(ctx, _load_config(config), kwargs)
    _require(opts, "corpus", "out")
    docs = _load_docs(opts["corpus"])
    vocab = train_vocab((d.text for d in docs), opts["size"])
    save_vocab(vocab, opts["out"])
    click.echo(json.dumps({"size": vocab.size, "merges": len(vocab.merges)}))


@main.command("train")
@_common
@click.option("--corpus", default=None)
@click.option("--vocab", "vocab_path", default=None)
@click.option("--out", default=None, help="Checkpoint output path.")
@click.option("--task", type=click.Choice(["generate", "infill"]), default="generate", show_default=True)
@click.option("--layout", type=click.Choice(["front", "back", "both"]), default="back", show_default=True)
@click.option("--p", default=0.2, show_default=True, help="Subtree selection probability.")
@click.option("--same-mask", is_flag=True, default=False)
@click.option("--no-songform", is_flag=True, default=False)
@click.option("--epochs", default=10, show_default=True)
@click.option("--batch", default=8, show_default=True)
@click.option("--lr", default=5e-5, show_default=True)
@click.option("--warmup-steps", default=500, show_default=True)
@click.option("--layers", default=4, show_default=True)
@click.option("--heads", default=4, show_default=True)
@click.option("--model-dim", default=256, show_default=True)
@click.option("--ff-dim", default=1024, show_default=True)
@click.option("--context-len", default=1024, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--plan-seed", default=101, show_default=True)
@click.option("--loss-csv", default=None)
@command_errors
@click.pass_context
def cmd_train(ctx, config, **kwargs):
    """Train a model from scratch on serialized plans."""
    opts = _apply_config(ctx, _load_config(config), kwargs)
    _require(opts, "corpus", "vocab_path", "out")
    docs = _load_docs(opts["corpus"])
    vocab = load_vocab(opts["vocab_path"])
    if opts["task"] == "generate":
        examples = make_generation_dataset(
            docs, vocab, Layout(opts["layout"]), opts["p"], opts["plan_seed"]
        )
    else:
        examples = make_infilling_dataset(
            docs, vocab, opts["p"], opts["plan_seed"],
            same_mask=opts["same_mask"], no_songform=opts["no_songform"],
        )
    cfg = LMConfig(
        layers=opts["layers"], heads=opts["heads"], model_dim=opts["model_dim"],
        ff_dim=opts["ff_dim"], context_len=opts["context_len"],
        vocab_size=vocab.size, seed=opts["seed"],
    )
    model = LanguageModel(cfg)
    tc = TrainConfig(
        epochs=opts["epochs"], batch=opts["batch"], lr=opts["lr"],
        warmup_steps=opts["warmup_steps"], seed=opts["seed"],
    )
    started = time.time()
    model, curve = train(
        model, examples, tc, pad_id=vocab.special_id(PAD),
        progress=lambda e, n, l: click.echo(f"epoch {e + 1}/{n} loss {l:.4f}", err=True),
    )
    model.eval()
    save_checkpoint(model, opts["out"], vocab.content_hash())
    if opts["loss_csv"]:
        with open(opts["loss_csv"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss"])
            for i, loss in enumerate(curve):
                writer.writerow([i + 1, f"{loss:.6f}"])
    click.echo(json.dumps({
        "checkpoint": opts["out"],
        "examples": len(examples),
        "final_loss": curve[-1],
        "seconds": round(time.time() - started, 1),
    }))


def _record_to_json(record: GenerationRecord) -> dict:
    return {
        "id": record.doc_id,
        "input_text": record.input_text,
        "pairs": [
            {
                "granularity": p.granularity.value,
                "expected": p.expected,
                "realized": p.realized,
                "text": p.text,
            }
            for p in record.pairs
        ],
        "document": doc_to_json(record.generated) if record.generated else None,
        "truncated_segments": record.truncated_segments,
        "grammar_violation": record.grammar_violation,
        "sequence": record.result.sequence.to_json() if record.result else None,
    }


@main.command("generate")
@_common
@click.option("--model", default=None, help="Checkpoint path, or 'oracle'.")
@click.option("--vocab", "vocab_path", default=None)
@click.option("--eval-corpus", default=None)
@click.option("--train-corpus", default=None, help="For summary line frequencies.")
@click.option("--out", default=None, help="Output records JSONL.")
@click.option("--layout", type=click.Choice(["front", "back", "both"]), default="back", show_default=True)
@click.option("--p", default=0.2, show_default=True)
@click.option("--plan-seed", default=500, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--limit", default=0, show_default=True, help="0 = all documents.")
@click.option("--trace-out", default=None, help="Decode trace JSONL.")
@_decode_options
@command_errors
@click.pass_context
def cmd_generate(ctx, config, **kwargs):
    """Generate documents from plans built over an evaluation corpus."""
    opts = _apply_config(ctx, _load_config(config), kwargs)
    _require(opts, "model", "vocab_path", "eval_corpus", "out")
    vocab = load_vocab(opts["vocab_path"])
    model = _load_model(opts["model"], vocab)
    docs = _load_docs(opts["eval_corpus"])
    if opts["limit"]:
        docs = docs[: opts["limit"]]
    freqs = (
        build_line_frequencies(_load_docs(opts["train_corpus"]))
        if opts["train_corpus"]
        else build_line_frequencies(docs)
    )
    records = generate_documents(
        model, vocab, docs, Layout(opts["layout"]), opts["p"],
        _decode_params(opts), opts["plan_seed"], line_frequencies=freqs,
    )
    with open(opts["out"], "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(_record_to_json(record), ensure_ascii=False) + "\n")
    if opts["trace_out"]:
        with open(opts["trace_out"], "w", encoding="utf-8") as fh:
            for record in records:
                if record.result:
                    for event in record.result.trace:
                        fh.write(json.dumps({"id": record.doc_id, **event}) + "\n")
    click.echo(json.dumps({"documents": len(records), "out": opts["out"]}))


@main.command("infill")
@_common
@click.option("--model", default=None)
@click.option("--vocab", "vocab_path", default=None)
@click.option("--eval-corpus", default=None)
@click.option("--out", default=None)
@click.option("--p", default=0.1, show_default=True)
@click.option("--plan-seed", default=700, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--limit", default=0, show_default=True)
@click.option("--same-mask", is_flag=True, default=False)
@click.option("--no-songform", is_flag=True, default=False)
@click.option("--baseline", is_flag=True, default=False, help="Past-context-only mode.")
@_decode_options
@command_errors
@click.pass_context
def cmd_infill(ctx, config, **kwargs):
    """Infill masked spans over an evaluation corpus."""
    opts = _apply_config(ctx, _load_config(config), kwargs)
    _require(opts, "model", "vocab_path", "eval_corpus", "out")
    vocab = load_vocab(opts["vocab_path"])
    model = _load_model(opts["model"], vocab)
    docs = _load_docs(opts["eval_corpus"])
    if opts["limit"]:
        docs = docs[: opts["limit"]]
    records = infill_documents(
        model, vocab, docs, opts["p"], _decode_params(opts), opts["plan_seed"],
        same_mask=opts["same_mask"], no_songform=opts["no_songform"],
        baseline=opts["baseline"],
    )
    with open(opts["out"], "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps({
                "id": record.doc_id,
                "segments": record.segments,
                "truncated_segments": record.truncated_segments,
            }, ensure_ascii=False) + "\n")
    click.echo(json.dumps({"documents": len(records), "out": opts["out"]}))


@main.command("evaluate")
@_common
@click.option("--records", default=None, help="Records JSONL from generate or infill.")
@click.option("--out-prefix", default=None, help="Writes <prefix>.json and <prefix>.txt.")
@click.option("--model", default=None, help="Checkpoint for PPL columns.")
@click.option("--vocab", "vocab_path", default=None)
@click.option("--eval-corpus", default=None, help="Gold corpus for PPL columns.")
@click.option("--task", type=click.Choice(["generate", "infill"]), default="generate", show_default=True)
@click.option("--layout", type=click.Choice(["front", "back", "both"]), default="back", show_default=True)
@click.option("--p", default=0.2, show_default=True)
@click.option("--plan-seed", default=500, show_default=True)
@command_errors
@click.pass_context
def cmd_evaluate(ctx, config, **kwargs):
    """Build the metrics report from decode records."""
    opts = _apply_config(ctx, _load_config(config), kwargs)
    _require(opts, "records", "out_prefix")
    rows = [
        json.loads(line)
        for line in Path(opts["records"]).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    ppls = None
    if opts["model"] and opts["vocab_path"] and opts["eval_corpus"]:
        vocab = load_vocab(opts["vocab_path"])
        model = _load_model(opts["model"], vocab)
        docs = _load_docs(opts["eval_corpus"])
        if opts["task"] == "generate":
            examples = make_generation_dataset(
                docs, vocab, Layout(opts["layout"]), opts["p"], opts["plan_seed"]
            )
        else:
            examples = make_infilling_dataset(docs, vocab, opts["p"], opts["plan_seed"])
        ppls = granularity_ppls(model, examples)
    if opts["task"] == "generate":
        records = []
        for row in rows:
            records.append(
                GenerationRecord(
                    doc_id=row["id"],
                    input_text=row["input_text"],
                    pairs=[
                        SyllablePair(
                            Granularity(p["granularity"]), p["expected"],
                            p["realized"], p.get("text", ""),
                        )
                        for p in row["pairs"]
                    ],
                    generated=doc_from_json(row["document"]) if row["document"] else None,
                    truncated_segments=row["truncated_segments"],
                    grammar_violation=row.get("grammar_violation", False),
                )
            )
        report = generation_report(records, ppls=ppls)
    else:
        from .pipeline import InfillRecord

        records = [
            InfillRecord(row["id"], row["segments"], row["truncated_segments"])
            for row in rows
        ]
        report = infill_report(records, ppls=ppls)
    Path(opts["out_prefix"] + ".json").write_text(
        json.dumps(report.to_json(), indent=2), encoding="utf-8"
    )
    Path(opts["out_prefix"] + ".txt").write_text(report.to_table() + "\n", encoding="utf-8")
    click.echo(report.to_table())


@main.command("consistency")
@_common
@click.option("--records", default=None, help="Generation records JSONL.")
@click.option("--out-prefix", default=None, help="Writes <prefix>.json and <prefix>.csv.")
@command_errors
@click.pass_context
def cmd_consistency(ctx, config, **kwargs):
    """Song-form consistency matrices over generated documents."""
    opts = _apply_config(ctx, _load_config(config), kwargs)
    _require(opts, "records", "out_prefix")
    docs = []
    for line in Path(opts["records"]).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        if row.get("document"):
            docs.append(doc_from_json(row["document"]))
    matrices = consistency_matrices(docs)
    Path(opts["out_prefix"] + ".json").write_text(
        json.dumps(matrices.to_json(), indent=2), encoding="utf-8"
    )
    matrices.write_csv(opts["out_prefix"] + ".csv")
    click.echo(json.dumps({"documents": len(docs), "out": opts["out_prefix"] + ".csv"}))


@main.command("serve")
@_common
@click.option("--model-dir", default=None, help="Directory of checkpoints + vocab.json.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8642, show_default=True)
@command_errors
@click.pass_context
def cmd_serve(ctx, config, **kwargs):
    """Run the local HTTP service for the studio UI."""
    opts = _apply_config(ctx, _load_config(config), kwargs)
    _require(opts, "model_dir")
    import uvicorn

    from .service import create_app

    app = create_app(opts["model_dir"])
    uvicorn.run(app, host=opts["host"], port=opts["port"], log_level="info")


if __name__ == "__main__":
    main()
