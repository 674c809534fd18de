"""Command-line driver: one subcommand per pipeline stage."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint as ckpt_io
from . import transfer
from .audio import AugmentPolicy, WavError, num_frames
from .checkpoint import CheckpointError
from .config import ConfigError, load_config, resolve, write_config
from .corpus import ManifestError, SynthSpec, language_x, load_manifest, synth_corpus, write_manifest
from .decode import read_hypotheses, write_hypotheses
from .metrics import bleu, corpus_wer, format_report
from .numerics import Schedule, set_default_dtype
from .pipeline import (
    beam_decode,
    decoder_config,
    examples_for,
    fit,
    make_featurizer,
    seq2seq_config,
)
from .ssl import CpcConfig, CpcModel, MaskedLmConfig, MaskedLmModel
from .ssl.features import code_sequences, finetune_ssl, train_contrastive, train_masked_lm, train_vq
from .textproc import TextError, Vocabulary, build_char_vocab, build_subword_vocab, filter_samples
from .translator import HybridModel, Seq2Seq, build_hybrid
from .translator.train import TrainingDiverged

log = logging.getLogger("sslst")

EXIT_CODES = {ConfigError: 2, ManifestError: 3, WavError: 3, TextError: 3, CheckpointError: 4,
              transfer.TransferError: 4, TrainingDiverged: 5}


class UsageError(ValueError):
    pass


# -- helpers ---------------------------------------------------------------------

def _out(cfg: dict) -> Path:
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg: dict, *keys: str) -> list:
    values, missing = [], []
    for dotted in keys:
        node = cfg
        for part in dotted.split("."):
            node = node[part]
        if node is None:
            missing.append(dotted)
        values.append(node)
    if missing:
        raise ConfigError([f"{k} is required for this command" for k in missing])
    return values


def _schedule(cfg: dict) -> Schedule:
    s = cfg["training"]["schedule"]
    return Schedule(s["kind"], float(s["peak"]), s["warmup"], s["total"], float(s["end"]))


def _augment(cfg: dict) -> AugmentPolicy:
    a = cfg["training"]["augment"]
    return AugmentPolicy(a["time_masks"], a["time_width"], a["freq_masks"], a["freq_width"])


def _file_id(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _load_kind(path, kind: str):
    model, ckpt = transfer.load_model(path)
    if ckpt.kind != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {ckpt.kind!r}")
    return model


def _ssl_models(cfg: dict) -> dict:
    f = cfg["features"]
    models = {}
    if f["cpc"]:
        models["cpc"] = _load_kind(f["cpc"], "cpc")
    if f["vq"]:
        models["vq"] = _load_kind(f["vq"], "vq")
    if f["mlm"]:
        models["mlm"] = _load_kind(f["mlm"], "mlm")
    return models


def _waves(cfg: dict):
    (train,) = _require(cfg, "data.train")
    return [u.waveform for u in load_manifest(train)]


def _vocab(cfg: dict, corpus) -> Vocabulary:
    d = cfg["data"]
    if d["vocab"]:
        return Vocabulary.load(d["vocab"])
    # transcripts and translations share one vocabulary so ASR decoders transfer to ST
    texts = [u.src_text for u in corpus] + [u.tgt_text for u in corpus]
    if d["vocab_kind"] == "subword":
        return build_subword_vocab(texts, d["vocab_size"])
    return build_char_vocab(texts)


def _metrics_log(out: Path):
    return open(out / "metrics.log", "w", encoding="utf-8")


# -- subcommands -----------------------------------------------------------------

def cmd_synth(cfg: dict) -> int:
    s = cfg["data"]["synth"]
    spec = SynthSpec(alphabet_size=s["alphabet"])
    if s["language"] == "x":
        spec = language_x(spec, s["offset_hz"])
    out = _out(cfg)
    write_manifest(out / "train.tsv", synth_corpus(spec, s["n_train"], s["seed"], prefix=f"{spec.lang}-train-"))
    write_manifest(out / "test.tsv", synth_corpus(spec, s["n_test"], s["test_seed"], prefix=f"{spec.lang}-test-"))
    print(f"wrote {s['n_train']} train and {s['n_test']} test utterances to {out}")
    return 0


def cmd_prepare(cfg: dict) -> int:
    (train,) = _require(cfg, "data.train")
    out = _out(cfg)
    corpus = load_manifest(train)
    kept = filter_samples(corpus, frames=lambda u: num_frames(u.num_samples),
                          chars=lambda u: max(len(u.src_text), len(u.tgt_text)))
    vocab = _vocab(cfg, kept)
    vocab.save(out / "vocab.txt")
    write_manifest(out / "train.filtered.tsv", kept)
    print(f"kept {len(kept)} of {len(corpus)} utterances; vocabulary of {len(vocab)} symbols "
          f"(fingerprint {vocab.fingerprint()})")
    return 0


def cmd_pretrain_cpc(cfg: dict) -> int:
    t, m = cfg["training"], cfg["model"]
    out = _out(cfg)
    model = CpcModel(CpcConfig(channels=m["cpc_channels"]), seed=t["seed"])
    with _metrics_log(out) as fh:
        losses = train_contrastive(model, _waves(cfg), t["steps"], _schedule(cfg), batch=t["batch"],
                                   crop=t["crop"], seed=t["seed"], metrics_log=fh)
    transfer.save_model(model, out / "cpc.ckpt", step=t["steps"])
    print(f"final contrastive loss {losses[-1]:.4f}" if losses else "no steps run")
    return 0


def cmd_train_vq(cfg: dict) -> int:
    t, m = cfg["training"], cfg["model"]
    (cpc_path,) = _require(cfg, "features.cpc")
    out = _out(cfg)
    cpc = _load_kind(cpc_path, "cpc")
    with _metrics_log(out) as fh:
        vq = train_vq(cpc, _waves(cfg), m["codebook_size"], t["kmeans_iters"], t["seed"], steps=t["steps"],
                      schedule=_schedule(cfg), batch=t["batch"], crop=t["crop"], metrics_log=fh)
    transfer.save_model(vq, out / "vq.ckpt", step=t["steps"])
    print(f"codebook of {vq.codebook_size} entries written to {out / 'vq.ckpt'}")
    return 0


def cmd_pretrain_mlm(cfg: dict) -> int:
    t, m = cfg["training"], cfg["model"]
    (vq_path,) = _require(cfg, "features.vq")
    out = _out(cfg)
    vq = _load_kind(vq_path, "vq")
    config = MaskedLmConfig(codebook_size=vq.codebook_size, width=m["mlm_width"], blocks=m["mlm_blocks"],
                            heads=m["mlm_heads"])
    model = MaskedLmModel(config, seed=t["seed"])
    with _metrics_log(out) as fh:
        losses = train_masked_lm(model, code_sequences(vq, _waves(cfg)), t["steps"], _schedule(cfg),
                                 batch=t["batch"], mask_prob=float(t["mask_prob"]), seed=t["seed"],
                                 metrics_log=fh, span=max(1, t["mask_span"]))
    transfer.save_model(model, out / "mlm.ckpt", step=t["steps"])
    print(f"final masked-LM loss {losses[-1]:.4f}" if losses else "no steps run")
    return 0


def cmd_finetune_features(cfg: dict) -> int:
    t, f = cfg["training"], cfg["features"]
    out = _out(cfg)
    waves = _waves(cfg)
    if f["kind"] == "mlm":
        mlm_path, vq_path = _require(cfg, "features.mlm", "features.vq")
        model, vq, name = _load_kind(mlm_path, "mlm"), _load_kind(vq_path, "vq"), "mlm"
    elif f["kind"] == "cpc":
        (cpc_path,) = _require(cfg, "features.cpc")
        model, vq, name = _load_kind(cpc_path, "cpc"), None, "cpc"
    else:
        raise ConfigError([f"features.kind {f['kind']!r} has no trainable extractor to fine-tune"])
    with _metrics_log(out) as fh:
        tuned = finetune_ssl(model, waves, t["steps"], _schedule(cfg), vq=vq, seed=t["seed"], metrics_log=fh)
    transfer.save_model(tuned, out / f"{name}.finetuned.ckpt", step=t["steps"])
    print(f"fine-tuned {name} model written to {out}")
    return 0


def _build_translator(cfg: dict, input_dim: int, vocab: Vocabulary):
    m, t = cfg["model"], cfg["training"]
    if m["type"] == "hybrid":
        (mlm_path,) = _require(cfg, "features.mlm")
        return build_hybrid(ckpt_io.load(mlm_path), decoder_config(m, len(vocab)), t["seed"], m["freeze_encoder"])
    return Seq2Seq(seq2seq_config(m, input_dim, len(vocab)), seed=t["seed"])


def _train(cfg: dict, task: str) -> int:
    t, tr = cfg["training"], cfg["transfer"]
    (train_path,) = _require(cfg, "data.train")
    out = _out(cfg)
    corpus = load_manifest(train_path)
    vocab = _vocab(cfg, corpus)
    vocab.save(out / "vocab.txt")
    models = _ssl_models(cfg)
    kind = "codes" if cfg["model"]["type"] == "hybrid" else cfg["features"]["kind"]
    featurize = make_featurizer(kind, models, cfg["features"]["standardize"])
    train = examples_for(corpus, featurize, vocab, task)
    dev = None
    if cfg["data"]["test"]:
        dev = examples_for(load_manifest(cfg["data"]["test"]), featurize, vocab, task)
    input_dim = 0 if kind == "codes" else train[0].inputs.shape[1]
    model = _build_translator(cfg, input_dim, vocab)
    if tr["scope"]:
        (source,) = _require(cfg, "transfer.source")
        transfer.transfer_parameters(ckpt_io.load(source), model, tr["scope"], vocab.fingerprint())
        cfg["transfer"]["source_id"] = _file_id(source)
    schedule = _schedule(cfg)
    augment = _augment(cfg)
    if isinstance(model, HybridModel):
        augment = None
    write_config(cfg, out / "config.json")
    with _metrics_log(out) as fh:
        result = fit(model, train, t["epochs"], schedule, augment, t["frame_budget"], t["seed"], dev=dev,
                     vocab=vocab, target_bleu=t["target_bleu"], out_dir=out, keep=t["keep_checkpoints"],
                     metrics_log=fh)
    summary = {"epochs": len(result.losses), "losses": result.losses, "dev_bleu": result.bleus,
               "seconds": round(result.seconds, 2)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"trained {len(result.losses)} epochs; last loss {result.losses[-1]:.4f}"
          + (f"; dev BLEU {result.bleus[-1]:.2f}" if result.bleus else ""))
    return 0


def cmd_transfer(cfg: dict) -> int:
    scope, source, train_path = _require(cfg, "transfer.scope", "transfer.source", "data.train")
    out = _out(cfg)
    corpus = load_manifest(train_path)
    vocab = _vocab(cfg, corpus)
    src = ckpt_io.load(source)
    if src.kind != "seq2seq":
        raise CheckpointError(f"{source}: transfer needs a seq2seq source, found {src.kind!r}")
    model = Seq2Seq(seq2seq_config(cfg["model"], src.descriptor["config"]["input_dim"], len(vocab)),
                    seed=cfg["training"]["seed"])
    transfer.transfer_parameters(src, model, scope, vocab.fingerprint())
    cfg["transfer"]["source_id"] = _file_id(source)
    transfer.save_model(model, out / "init.ckpt", vocab=vocab, source=cfg["transfer"]["source_id"])
    print(f"initialised {out / 'init.ckpt'} from {source} ({scope})")
    return 0


def cmd_average(cfg: dict, paths: list[str]) -> int:
    out = _out(cfg)
    files = list(paths)
    if not files:
        (ckpt,) = _require(cfg, "decode.checkpoint")
        files = sorted(str(p) for p in Path(ckpt).glob("*.ckpt")) if Path(ckpt).is_dir() else [ckpt]
    files = [f for f in files if not f.endswith("averaged.ckpt")]
    avg = transfer.average_checkpoints(files, cfg["decode"]["average"])
    ckpt_io.save(avg, out / "averaged.ckpt")
    print(f"averaged checkpoints {avg.metadata['averaged_orders']} into {out / 'averaged.ckpt'}")
    return 0


def cmd_decode(cfg: dict, task: str) -> int:
    d = cfg["decode"]
    ckpt_path, test_path = _require(cfg, "decode.checkpoint", "data.test")
    out = _out(cfg)
    model, ckpt = transfer.load_model(ckpt_path)
    vocab = transfer.checkpoint_vocab(ckpt)
    if vocab is None:
        raise CheckpointError(f"{ckpt_path}: no vocabulary stored with the model")
    kind = "codes" if isinstance(model, HybridModel) else cfg["features"]["kind"]
    featurize = make_featurizer(kind, _ssl_models(cfg), cfg["features"]["standardize"])
    examples = examples_for(load_manifest(test_path), featurize, vocab, task)
    rows = beam_decode(model, examples, vocab, d["beam"], d["max_len"], d["alpha"])
    target = Path(d["hypotheses"]) if d["hypotheses"] else out / "hypotheses.tsv"
    write_hypotheses(target, rows)
    print(f"decoded {len(rows)} utterances to {target}")
    return 0


def cmd_score(cfg: dict, task: str) -> int:
    test_path, hyp_path = _require(cfg, "data.test", "decode.hypotheses")
    refs = {u.id: (u.src_text if task == "asr" else u.tgt_text) for u in load_manifest(test_path)}
    hyps = read_hypotheses(hyp_path)
    missing = sorted(set(refs) - set(hyps))
    if missing:
        raise ManifestError(f"{len(missing)} utterances have no hypothesis, e.g. {missing[0]}")
    ids = sorted(refs)
    r, h = [refs[i] for i in ids], [hyps[i] for i in ids]
    print(format_report("BLEU", bleu(r, h)))
    if task == "asr":
        print(format_report("WER", 100.0 * corpus_wer(r, h)))
    return 0


def cmd_describe(path: str) -> int:
    print(ckpt_io.describe(ckpt_io.load(path)))
    return 0


# -- entry point -----------------------------------------------------------------

COMMANDS = ("prepare", "synth", "pretrain-cpc", "train-vq", "pretrain-mlm", "train-asr", "train-st", "transfer",
            "finetune-features", "average", "decode", "score", "describe")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sslst", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("paths", nargs="*", help="checkpoint files (average, describe)")
    parser.add_argument("--config", help="JSON experiment configuration")
    parser.add_argument("--seed", type=int, help="overrides training.seed")
    parser.add_argument("--out", help="overrides the output directory")
    parser.add_argument("--threads", type=int, default=1, help="BLAS threads (1 = deterministic)")
    parser.add_argument("--task", choices=("asr", "st"), default="st", help="target side for decode/score")
    parser.add_argument("--verbose", "-v", action="store_true")
    return parser


def run(args: argparse.Namespace) -> int:
    if args.command == "describe":
        if len(args.paths) != 1:
            raise UsageError("describe takes exactly one checkpoint path")
        return cmd_describe(args.paths[0])
    cfg = load_config(args.config) if args.config else resolve({})
    if args.seed is not None:
        cfg["training"]["seed"] = args.seed
    if args.out is not None:
        cfg["output"] = args.out
    set_default_dtype(np.float32)
    handlers = {
        "synth": cmd_synth,
        "prepare": cmd_prepare,
        "pretrain-cpc": cmd_pretrain_cpc,
        "train-vq": cmd_train_vq,
        "pretrain-mlm": cmd_pretrain_mlm,
        "finetune-features": cmd_finetune_features,
        "train-asr": lambda c: _train(c, "asr"),
        "train-st": lambda c: _train(c, "st"),
        "transfer": cmd_transfer,
        "average": lambda c: cmd_average(c, args.paths),
        "decode": lambda c: cmd_decode(c, args.task),
        "score": lambda c: cmd_score(c, args.task),
    }
    code = handlers[args.command](cfg)
    if args.command not in ("train-asr", "train-st", "score"):
        write_config(cfg, _out(cfg) / "config.json")
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    with threadpool_limits(args.threads):
        try:
            return run(args)
        except tuple(EXIT_CODES) as exc:
            category = type(exc).__name__
            print(f"error[{category}]: {exc}", file=sys.stderr)
            return next(code for cls, code in EXIT_CODES.items() if isinstance(exc, cls))
        except (UsageError, FileNotFoundError) as exc:
            print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
            return 1


if __name__ == "__main__":
    sys.exit(main())
