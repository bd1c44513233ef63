"""Command-line pipeline: toygen -> bpe-learn -> pretrain -> [finetune-parallel] -> train-qg -> generate -> evaluate.

All artifacts live under ``--out-dir``::

    data/{mono_pri,mono_sec,parallel,qg_pri,qg_pri_dev,qg_sec}.jsonl
    bpe.model
    checkpoints/{pretrain,finetune,qg-best,qg-final}/
    predictions.jsonl, eval.json, log.jsonl, manifest-<command>.json
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bpe import BpeModel, learn_bpe
from .data import (KIND_FIELDS, SCRIPTS, CorpusError, gen_toy_languages, load_corpus, save_corpus,
                   toy_qg_pairs, validate_corpus)
from .decoding import batch_generate, read_predictions, write_predictions
from .metrics import evaluate
from .pipeline import phases_for, resolve_config, load_config_file, write_manifest
from .training import MetricsLog, Trainer
from .xmodel import load_checkpoint

log = logging.getLogger("clqg")

CORPUS_FILES = {
    "mono_pri": ("mono", "pri"),
    "mono_sec": ("mono", "sec"),
    "parallel": ("parallel", None),
    "qg_pri": ("qg", "pri"),
    "qg_pri_dev": ("qg", "pri"),
    "qg_sec": ("qg", "sec"),
}


class CliError(Exception):
    def __init__(self, message: str, hint: str | None = None):
        super().__init__(message)
        self.hint = hint


# shared plumbing ---------------------------------------------------------------

class Run:
    """Resolved flags, paths and the JSONL log of one command invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out_dir)
        writes = args.command != "validate"  # validation is read-only
        if writes:
            self.out.mkdir(parents=True, exist_ok=True)
        file_values = load_config_file(args.config) if args.config else {}
        overrides = {"variant": args.variant, "seed": args.seed}
        self.variant, self.config = resolve_config(file_values, overrides)
        self.data_dir = Path(getattr(args, "data_dir", None) or self.out / "data")
        self.metrics = MetricsLog(self.out / "log.jsonl" if writes else None)

    @property
    def seed(self) -> int:
        return self.config.seed

    def event(self, **record) -> None:
        self.metrics.write(command=self.args.command, **record)

    def corpus_path(self, name: str, producer: str = "toygen") -> Path:
        path = self.data_dir / f"{name}.jsonl"
        if not path.exists():
            raise CliError(f"missing corpus {path}", f"run `clqg {producer}` first or pass --data-dir")
        return path

    def corpus(self, name: str):
        kind, lang = CORPUS_FILES[name]
        return load_corpus(self.corpus_path(name), kind, lang or "pri")

    def bpe(self) -> BpeModel:
        path = Path(self.args.bpe or self.out / "bpe.model")
        if not path.exists():
            raise CliError(f"missing BPE model {path}", "run `clqg bpe-learn` first")
        return BpeModel.load(path)

    def checkpoint_dir(self) -> Path:
        return self.out / "checkpoints"

    def trainer(self, bpe: BpeModel, init: str | None, producer: str) -> Trainer:
        if init is None:
            return Trainer.create(bpe, self.config, self.metrics)
        path = Path(init)
        if not (path / "manifest.json").exists():
            raise CliError(f"missing checkpoint {path}", f"run `clqg {producer}` first")
        model, manifest = load_checkpoint(path, seed=self.seed)
        if manifest["vocab_hash"] and manifest["vocab_hash"] != bpe.fingerprint():
            raise CliError(f"checkpoint {path} was trained with a different BPE model",
                           "re-run the pipeline from `clqg bpe-learn`")
        return Trainer(model, bpe, self.config, self.metrics)

    def manifest(self, inputs: dict) -> None:
        write_manifest(self.out, self.args.command,
                       {"variant": self.variant, **self.config.to_dict()}, self.seed,
                       {k: v for k, v in inputs.items() if v is not None and Path(v).is_file()})


# commands -----------------------------------------------------------------------

def cmd_toygen(run: Run) -> dict:
    a = run.args
    langs = gen_toy_languages(a.n_pairs, a.vocab_size, run.seed, n_mono=a.n_mono,
                              n_parallel=a.n_mono, n_qg_sec=a.n_qg_sec, script=a.script)
    dev = toy_qg_pairs(langs.lexicon, a.n_dev, "pri", run.seed)
    run.data_dir.mkdir(parents=True, exist_ok=True)
    for name, corpus in zip(("mono_pri", "mono_sec", "parallel", "qg_pri", "qg_sec"), langs):
        save_corpus(corpus, run.data_dir / f"{name}.jsonl")
    save_corpus(dev, run.data_dir / "qg_pri_dev.jsonl")
    counts = {name: sum(1 for _ in open(run.data_dir / f"{name}.jsonl", encoding="utf-8"))
              for name in CORPUS_FILES}
    run.event(event="toygen", **counts)
    return {"data_dir": str(run.data_dir), "lines": counts}


def cmd_bpe_learn(run: Run) -> dict:
    corpora, inputs = [], {}
    for name, (kind, _) in CORPUS_FILES.items():
        path = run.data_dir / f"{name}.jsonl"
        if not path.exists():
            continue
        corpus = load_corpus(path, kind)
        inputs[name] = path
        if kind == "mono":
            corpora.append(corpus.lines)
        else:
            corpora.extend([[p[0] for p in corpus.pairs], [p[1] for p in corpus.pairs]])
    if not corpora:
        raise CliError(f"no corpora found in {run.data_dir}", "run `clqg toygen` first or pass --data-dir")
    merges = run.args.num_merges or run.config.num_merges
    bpe = learn_bpe(corpora, merges)
    path = Path(run.args.bpe or run.out / "bpe.model")
    bpe.save(path)
    run.manifest(inputs)
    run.event(event="bpe", merges=len(bpe.merges), vocab=len(bpe))
    return {"bpe": str(path), "merges": len(bpe.merges), "vocab": len(bpe)}


def cmd_pretrain(run: Run) -> dict:
    phases = phases_for(run.variant)
    if not phases.pretrain:
        run.event(event="skipped", reason=f"variant {run.variant} has no pretraining phase")
        return {"skipped": True, "variant": run.variant}
    bpe = run.bpe()
    trainer = run.trainer(bpe, None, "")
    mono_pri = run.corpus("mono_pri").lines
    mono_sec = run.corpus("mono_sec").lines if phases.secondary else None
    history = trainer.pretrain(mono_pri, mono_sec, checkpoint_dir=run.checkpoint_dir())
    final = run.checkpoint_dir() / "pretrain"
    trainer.checkpoint(run.checkpoint_dir(), "pretrain")
    run.manifest({"bpe": run.args.bpe or run.out / "bpe.model",
                  "mono_pri": run.data_dir / "mono_pri.jsonl",
                  "mono_sec": run.data_dir / "mono_sec.jsonl" if phases.secondary else None})
    return {"checkpoint": str(final), "epochs": len(history), "last": history[-1] if history else {}}


def cmd_finetune_parallel(run: Run) -> dict:
    bpe = run.bpe()
    init = run.args.init or run.checkpoint_dir() / "pretrain"
    trainer = run.trainer(bpe, str(init), "pretrain")
    losses = trainer.finetune_parallel(run.corpus("parallel").pairs, checkpoint_dir=run.checkpoint_dir())
    run.manifest({"bpe": run.args.bpe or run.out / "bpe.model", "parallel": run.data_dir / "parallel.jsonl",
                  "init": Path(init) / "params.bin"})
    return {"checkpoint": str(run.checkpoint_dir() / "finetune"), "steps": len(losses),
            "final_loss": losses[-1]}


def _default_init(run: Run) -> tuple[str | None, str]:
    phases = phases_for(run.variant)
    if phases.parallel:
        return str(run.checkpoint_dir() / "finetune"), "finetune-parallel"
    if phases.pretrain:
        return str(run.checkpoint_dir() / "pretrain"), "pretrain"
    return None, ""


def cmd_train_qg(run: Run) -> dict:
    phases = phases_for(run.variant)
    bpe = run.bpe()
    init, producer = (run.args.init, "pretrain") if run.args.init else _default_init(run)
    trainer = run.trainer(bpe, init, producer)
    qg_pri = run.corpus("qg_pri").pairs
    qg_sec = run.corpus("qg_sec").pairs if phases.secondary else None
    dev_path = run.data_dir / "qg_pri_dev.jsonl"
    dev = load_corpus(dev_path, "qg").pairs if dev_path.exists() else None
    result = trainer.train_qg(qg_pri, qg_sec, dev=dev, checkpoint_dir=run.checkpoint_dir())
    run.manifest({"bpe": run.args.bpe or run.out / "bpe.model", "qg_pri": run.data_dir / "qg_pri.jsonl",
                  "qg_sec": run.data_dir / "qg_sec.jsonl" if phases.secondary else None,
                  "dev": dev_path if dev else None,
                  "init": Path(init) / "params.bin" if init else None})
    return {"checkpoint": str(run.checkpoint_dir() / "qg-final"), **result}


def _read_sentences(path: Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        first = json.loads(fh.readline() or "{}")
    kind = "qg" if "sentence" in first else "mono"
    corpus = load_corpus(path, kind)
    return corpus.sentences if kind == "qg" else list(corpus.lines)


def cmd_generate(run: Run) -> dict:
    bpe = run.bpe()
    ckpt = Path(run.args.checkpoint or run.checkpoint_dir() / "qg-final")
    if not (ckpt / "manifest.json").exists():
        raise CliError(f"missing checkpoint {ckpt}", "run `clqg train-qg` first")
    model, _ = load_checkpoint(ckpt, seed=run.seed)
    src = Path(run.args.input) if run.args.input else run.corpus_path("qg_pri_dev")
    sentences = _read_sentences(src)
    max_len = run.args.max_len or run.config.max_len
    results = batch_generate(model, bpe, sentences, run.args.lang, max_len)
    out = Path(run.args.output or run.out / "predictions.jsonl")
    write_predictions(out, sentences, results)
    terminated = {k: sum(r.terminated == k for r in results) for k in ("EOS", "max_len", "error")}
    run.manifest({"bpe": run.args.bpe or run.out / "bpe.model", "input": src,
                  "checkpoint": ckpt / "params.bin"})
    run.event(event="generate", lines=len(results), **terminated)
    return {"predictions": str(out), "lines": len(results), "terminated": terminated}


def _read_texts(path: Path) -> list[str]:
    """Predictions (``prediction``) or references (``question`` / ``text``) from JSONL."""
    records = read_predictions(path)
    for key in ("prediction", "question", "text"):
        if records and all(key in r for r in records):
            return [r[key] for r in records]
    raise CliError(f"{path}: records need a 'prediction', 'question' or 'text' field")


def cmd_evaluate(run: Run) -> dict:
    pred_path = Path(run.args.predictions or run.out / "predictions.jsonl")
    if not pred_path.exists():
        raise CliError(f"missing predictions {pred_path}", "run `clqg generate` first")
    ref_path = Path(run.args.references) if run.args.references else run.corpus_path("qg_pri_dev")
    report = evaluate(_read_texts(pred_path), _read_texts(ref_path))
    (run.out / "eval.json").write_text(report.to_json() + "\n", encoding="utf-8")
    run.event(event="evaluate", **json.loads(report.to_json()))
    print(report.table(), file=sys.stderr)
    return json.loads(report.to_json())


def cmd_validate(run: Run) -> dict:
    report = validate_corpus(run.args.path, run.args.kind)
    if not report["ok"]:
        raise CliError(f"{run.args.path}: {report['lines'] - report['valid']} invalid line(s)",
                       json.dumps(report["errors"], ensure_ascii=False))
    return report


COMMANDS = {
    "toygen": cmd_toygen,
    "bpe-learn": cmd_bpe_learn,
    "pretrain": cmd_pretrain,
    "finetune-parallel": cmd_finetune_parallel,
    "train-qg": cmd_train_qg,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--config", help="TOML file of TrainConfig keys plus variant/preset")
    common.add_argument("--variant", default=None,
                        choices=["transformer", "transformer+pretraining", "clqg", "clqg+parallel"])
    common.add_argument("--out-dir", default="runs/toy")
    common.add_argument("--data-dir", default=None, help="corpus directory (default OUT_DIR/data)")
    common.add_argument("--bpe", default=None, help="BPE model path (default OUT_DIR/bpe.model)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="clqg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toygen", parents=[common], help="write synthetic toy-language corpora")
    p.add_argument("--n-pairs", type=int, default=500, help="primary QG pairs")
    p.add_argument("--vocab-size", type=int, default=1000)
    p.add_argument("--n-mono", type=int, default=2000, help="monolingual and parallel lines")
    p.add_argument("--n-qg-sec", type=int, default=2000)
    p.add_argument("--n-dev", type=int, default=200)
    p.add_argument("--script", default="latin", choices=sorted(SCRIPTS),
                   help="primary surface form (default latin)")

    p = sub.add_parser("bpe-learn", parents=[common], help="learn a joint BPE model over all corpora")
    p.add_argument("--num-merges", type=int, default=None)

    sub.add_parser("pretrain", parents=[common], help="denoising + back-translation pretraining")

    p = sub.add_parser("finetune-parallel", parents=[common], help="supervised translation fine-tuning")
    p.add_argument("--init", default=None, help="checkpoint to start from")

    p = sub.add_parser("train-qg", parents=[common], help="joint supervised question generation")
    p.add_argument("--init", default=None, help="checkpoint to start from")

    p = sub.add_parser("generate", parents=[common], help="greedy question generation")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--input", default=None, help="JSONL with 'sentence' or 'text' (default dev set)")
    p.add_argument("--output", default=None)
    p.add_argument("--lang", default="pri", choices=["pri", "sec"])
    p.add_argument("--max-len", type=int, default=None)

    p = sub.add_parser("evaluate", parents=[common], help="BLEU-1..4, ROUGE-L and simplified METEOR")
    p.add_argument("--predictions", default=None)
    p.add_argument("--references", default=None)

    p = sub.add_parser("validate", parents=[common], help="check a corpus file against its schema")
    p.add_argument("path")
    p.add_argument("--kind", required=True, choices=sorted(KIND_FIELDS))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        run = Run(args)
        try:
            result = COMMANDS[args.command](run)
        finally:
            run.metrics.close()
    except (CliError, CorpusError, FileNotFoundError, ValueError) as exc:
        error = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "hint", None):
            error["hint"] = exc.hint
        print(json.dumps(error, ensure_ascii=False), file=sys.stderr)
        return 2
    print(json.dumps(result, ensure_ascii=False, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
