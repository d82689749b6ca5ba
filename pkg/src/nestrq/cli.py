"""``nestrq`` command line: corpus, quantizer, pre-training, adaptation, probe.

Machine-readable JSON goes to stdout, human messages to stderr. Exit codes:
0 success, 1 I/O, 2 config or validation, 3 degenerate data.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, override, parse_config, resolve_seed
from .encoder import CausalitySpec, EncoderConfig
from .errors import ConfigError, DegenerateDataError, InputError, NestRQError
from .features import (
    generate_corpus,
    read_feature_file,
    read_labels,
    read_manifest,
    write_feature_file,
    write_labels,
    write_manifest,
    write_wav,
)
from .features.io import resolve
from .quantizer import (
    init_quantizer,
    load_quantizer,
    quantize,
    read_token_file,
    save_quantizer,
    token_stats,
    write_token_file,
)
from .serialization import canonical_json, file_digest
from .training import (
    adapt_state,
    linear_probe,
    load_checkpoint,
    pretrain,
    read_manifest as read_checkpoint_manifest,
    save_checkpoint,
)

log = logging.getLogger("nestrq")


def _emit(obj) -> None:
    sys.stdout.write(canonical_json(obj) + "\n")
    sys.stdout.flush()


def _load_run_config(path) -> tuple[RunConfig, dict]:
    if path is None:
        return parse_config({}), {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    return parse_config(raw), raw


def _seeded(cfg: RunConfig, raw: dict, section: str, flag) -> RunConfig:
    current = getattr(cfg, section).seed
    has = isinstance(raw.get(section), dict) and "seed" in raw[section]
    return override(cfg, section, seed=resolve_seed(flag, has, current))


def _load_corpus(manifest_path):
    rows = read_manifest(manifest_path)
    feats = [read_feature_file(resolve(manifest_path, r["path"])) for r in rows]
    return rows, feats


# --- verbs ------------------------------------------------------------------

def cmd_gen_corpus(args) -> dict:
    cfg, raw = _load_run_config(args.config)
    cfg = _seeded(cfg, raw, "corpus", args.seed)
    cfg = override(cfg, "corpus", num_utterances=args.num_utterances)
    out = Path(args.out)
    for sub in ("feats", "labels", "wav"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    cdigest = cfg.digest()
    rows = []
    for u in generate_corpus(cfg.corpus, cfg.features):
        feat, lab, wav = f"feats/{u.utterance_id}.feat", f"labels/{u.utterance_id}.json", f"wav/{u.utterance_id}.wav"
        write_feature_file(out / feat, u.features)
        write_labels(out / lab, u.utterance_id, u.labels)
        write_wav(out / wav, u.waveform, u.sample_rate_hz)
        rows.append({
            "id": u.utterance_id, "path": feat, "label_path": lab, "wav_path": wav,
            "duration_s": u.duration_s, "num_frames": u.features.num_frames,
            "num_states": cfg.corpus.num_states, "config_digest": cdigest,
        })
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, rows)
    return {
        "manifest": str(manifest), "num_utterances": len(rows),
        "manifest_digest": file_digest(manifest), "config_digest": cdigest,
    }


def cmd_quantize(args) -> dict:
    cfg, raw = _load_run_config(args.config)
    cfg = _seeded(cfg, raw, "quantizer", args.seed)
    _, feats = _load_corpus(args.manifest)
    qc = cfg.quantizer
    if args.quantizer_in:
        q = load_quantizer(args.quantizer_in)
    else:
        q = init_quantizer(qc.seed, feats, stack=qc.stack, num_mels=cfg.features.num_mels,
                           dim=qc.dim, vocab_size=qc.V, min_standardizer_rows=qc.min_standardizer_rows)
    seqs = [quantize(q, f) for f in feats if f.num_frames >= q.stack]
    if not seqs:
        raise DegenerateDataError("no utterance holds a full stack of frames")
    stats = token_stats(seqs, q.vocab_size)
    if args.quantizer_out:
        save_quantizer(args.quantizer_out, q, extra={"config_digest": cfg.digest()})
    write_token_file(args.tokens_out, seqs)
    return {
        "V": q.vocab_size, "dim": q.dim, "stack": q.stack, "seed": q.seed,
        "fingerprint": q.fingerprint(), "config_digest": cfg.digest(),
        "tokens_digest": file_digest(args.tokens_out), "stats": stats.to_json(),
    }


def cmd_pretrain(args) -> dict:
    cfg, raw = _load_run_config(args.config)
    cfg = _seeded(cfg, raw, "training", args.seed)
    cfg = override(cfg, "training", steps=args.steps)
    cfg = override(cfg, "objective", name=args.objective)
    cfg = parse_config(cfg.to_json())  # re-validate after overrides
    _, feats = _load_corpus(args.manifest)
    if not feats:
        raise DegenerateDataError("manifest lists no utterances")
    q = load_quantizer(args.quantizer)
    tokens = read_token_file(args.tokens) if args.tokens else None
    if tokens is not None and any(t.vocab_size != q.vocab_size for t in tokens):
        raise ConfigError("token file vocabulary differs from the quantizer's V")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / "metrics.jsonl"
    train_cfg = cfg.train_config()

    def report(rec):
        if rec.loss is not None:
            log.info("step %d loss %.4f lr %.3g", rec.step, rec.loss, rec.lr)

    from .training import init_train_state

    state = init_train_state(train_cfg, cfg.encoder, q)
    state.meta["run_config_digest"] = cfg.digest()
    state, records = pretrain(train_cfg, feats, q, cfg.encoder, tokens=tokens, metrics_path=metrics,
                              on_metrics=report, checkpoint_dir=out / "checkpoint", state=state)
    losses = [r.loss for r in records if r.loss is not None]
    return {
        "objective": train_cfg.objective, "steps": state.step,
        "final_loss": losses[-1] if losses else None,
        "checkpoint": str(out / "checkpoint"), "metrics": str(metrics),
        "metrics_digest": file_digest(metrics), "config_digest": cfg.digest(),
    }


def parse_causality(text: str, m: int, num_blocks: int) -> CausalitySpec:
    if text == "causal":
        return CausalitySpec.causal(m)
    if text == "noncausal":
        return CausalitySpec.noncausal(m)
    if text.startswith("lookahead:"):
        try:
            M = int(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad lookahead count in {text!r}") from None
        if not 0 <= M <= num_blocks:
            raise ConfigError(f"lookahead {M} outside 0..{num_blocks} blocks")
        return CausalitySpec("C-A-lookahead" if M else "C-A", "C-C", M, m)
    raise ConfigError(f"--to-causality must be causal, noncausal or lookahead:M, got {text!r}")


def cmd_adapt(args) -> dict:
    manifest = read_checkpoint_manifest(args.checkpoint)
    enc = EncoderConfig.from_json(manifest["encoder_config"])
    src = enc.causality
    target = parse_causality(args.to_causality, src.conv_half_width, enc.num_blocks)
    out = Path(args.out)
    if target == src:
        if out.exists():
            shutil.rmtree(out)
        shutil.copytree(args.checkpoint, out)
        return {"out": str(out), "from": src.label(), "to": target.label(), "kernels": "none",
                "copied": True, "config_digest": manifest["config_digest"]}
    state = load_checkpoint(args.checkpoint)
    adapted = adapt_state(state, target, args.seed if args.seed is not None else _default_seed())
    save_checkpoint(adapted, out)
    last = adapted.meta["adaptations"][-1]
    return {"out": str(out), "from": src.label(), "to": target.label(), "kernels": last["kernels"],
            "copied": False, "source_digest": last["source_digest"],
            "config_digest": adapted.config_digest()}


def _default_seed() -> int:
    from .config import env_seed

    env = env_seed()
    return 0 if env is None else env


def cmd_probe(args) -> dict:
    cfg, raw = _load_run_config(args.config)
    cfg = _seeded(cfg, raw, "probe", args.seed)
    cfg = override(cfg, "probe", split=args.split, epochs=args.epochs)
    state = load_checkpoint(args.checkpoint)
    rows, feats = _load_corpus(args.manifest)
    labels = [read_labels(resolve(args.manifest, r["label_path"])) for r in rows]
    keep = [i for i, f in enumerate(feats) if f.num_frames >= state.quantizer.stack]
    if len(keep) < 2:
        raise DegenerateDataError("probe needs at least two usable utterances")
    feats = [feats[i] for i in keep]
    labels = [labels[i] for i in keep]
    states = {r.get("num_states") for r in rows}
    num_classes = states.pop() if len(states) == 1 and None not in states else None
    pc = cfg.probe
    res = linear_probe(state, feats, labels, num_classes=num_classes, split=pc.split,
                       epochs=pc.epochs, lr=pc.lr, seed=pc.seed, shuffle_labels=args.shuffle_labels)
    return {"accuracy": res.accuracy, "chance": res.chance, "num_test_frames": res.num_test_frames,
            "train_accuracy": res.train_accuracy, "shuffled": bool(args.shuffle_labels),
            "config_digest": cfg.digest()}


def cmd_inspect_codebook(args) -> dict:
    q = load_quantizer(args.quantizer)
    report = {
        "V": q.vocab_size, "dim": q.dim, "stack": q.stack, "seed": q.seed,
        "num_mels": q.num_mels, "fingerprint": q.fingerprint(),
        "codebook_norm_max_dev": float(np.abs(np.linalg.norm(q.codebook, axis=1) - 1.0).max()),
    }
    if args.tokens:
        report["stats"] = token_stats(read_token_file(args.tokens), q.vocab_size).to_json()
    return report


# --- plumbing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nestrq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"nestrq {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="synthesize the labelled toy corpus")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--num-utterances", type=int)
    g.set_defaults(func=cmd_gen_corpus)

    q = sub.add_parser("quantize", help="build (or load) the quantizer and emit tokens")
    q.add_argument("--config")
    q.add_argument("--manifest", required=True)
    q.add_argument("--quantizer-out")
    q.add_argument("--quantizer-in")
    q.add_argument("--tokens-out", required=True)
    q.add_argument("--seed", type=int)
    q.set_defaults(func=cmd_quantize)

    t = sub.add_parser("pretrain", help="pre-train an encoder")
    t.add_argument("--config")
    t.add_argument("--objective", choices=("bestrq", "nestrq"))
    t.add_argument("--manifest", required=True)
    t.add_argument("--quantizer", required=True)
    t.add_argument("--tokens")
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_pretrain)

    a = sub.add_parser("adapt", help="move a checkpoint to another causality")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--to-causality", required=True, metavar="causal|noncausal|lookahead:M")
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_adapt)

    r = sub.add_parser("probe", help="linear probe of frozen encoder states")
    r.add_argument("--config")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--manifest", required=True)
    r.add_argument("--split", type=float)
    r.add_argument("--epochs", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--shuffle-labels", action="store_true")
    r.set_defaults(func=cmd_probe)

    c = sub.add_parser("inspect-codebook", help="quantizer summary and token statistics")
    c.add_argument("--quantizer", required=True)
    c.add_argument("--tokens")
    c.set_defaults(func=cmd_inspect_codebook)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        _emit(args.func(args))
        return 0
    except DegenerateDataError as err:
        print(f"error: degenerate data: {err}", file=sys.stderr)
        return 3
    except (OSError, InputError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (NestRQError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
