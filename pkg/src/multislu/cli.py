"""Command-line entry point: train | eval | synth-data | gradcheck | serve | demo.

Training options can come from a versioned ``key=value`` config file; any
explicitly passed flag overrides the file.  Exit codes: 0 success, 1 runtime
failure, 2 bad usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .corpus import load_multiround, make_synthetic_corpus, save_multiround
from .gradsuite import format_suite, run_gradient_suite
from .trainer import (
    TrainConfig,
    TrainerError,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)


class UsageError(Exception):
    pass


def _parse_config_file(path: str) -> dict:
    """key=value lines; requires a version=1 line; # comments allowed."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    out: dict = {}
    version = None
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{ln}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "version":
            version = value
            continue
        if key not in fields:
            raise UsageError(f"{path}:{ln}: unknown config key {key!r}")
        out[key] = _convert(value, fields[key].type, key, f"{path}:{ln}")
    if version != "1":
        raise UsageError(f"{path}: missing or unsupported version line (need version=1)")
    return out


def _convert(value: str, ftype: str, key: str, where: str):
    ftype = str(ftype)
    if value.lower() == "none":
        return None
    try:
        if "bool" in ftype:
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if "int" in ftype:
            return int(value)
        if "float" in ftype:
            return float(value)
    except ValueError:
        raise UsageError(f"{where}: bad value {value!r} for {key}") from None
    return value


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multislu", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_data_flags(t)
    t.add_argument("--eval-data", help="held-out multiround JSONL for per-epoch metrics")
    t.add_argument("--config", help="training config file (key=value, version=1)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--m-embed", type=int)
    t.add_argument("--out", default="model.ckpt", help="checkpoint path")
    t.add_argument("--metrics", help="per-epoch metrics JSONL path")

    e = sub.add_parser("eval", help="per-round metric table for a checkpoint")
    _add_data_flags(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--rounds", type=int, default=4, choices=range(1, 5))

    s = sub.add_parser("synth-data", help="write a synthetic multiround corpus")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-rounds", type=int, default=4)
    s.add_argument("--min-rounds", type=int, default=1)
    s.add_argument("--out", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    g.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("serve", help="run the session service")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    v.add_argument("--max-rounds", type=int, default=4)
    v.add_argument("--persist-dir", help="directory for append-only session transcripts")
    v.add_argument("--static-dir", help="static files to serve at / (web client build)")
    v.add_argument("--debug-sample", action="store_true", help="sample masks instead of greedy")

    d = sub.add_parser("demo", help="replay a scripted multiround scenario")
    d.add_argument("--scenario", default="figure1", help="packaged name or JSON path")
    d.add_argument("--seed", type=int, default=7)
    return p


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="multiround JSONL corpus")
    p.add_argument("--synthetic", type=int, metavar="N", help="generate N synthetic samples")
    p.add_argument("--synth-seed", type=int, default=0)
    p.add_argument("--synth-min-rounds", type=int, default=1)


def _load_data(args) -> list:
    if bool(args.data) == bool(args.synthetic):
        raise UsageError("exactly one of --data / --synthetic is required")
    if args.data:
        return load_multiround(args.data)
    samples, _ = make_synthetic_corpus(
        args.synthetic, seed=args.synth_seed, min_rounds=args.synth_min_rounds
    )
    return samples


def _cmd_train(args) -> int:
    overrides = {}
    if args.config:
        overrides.update(_parse_config_file(args.config))
    for key, flag in [
        ("epochs", args.epochs),
        ("batch_size", args.batch_size),
        ("learning_rate", args.learning_rate),
        ("seed", args.seed),
        ("m_embed", args.m_embed),
    ]:
        if flag is not None:
            overrides[key] = flag
    config = TrainConfig(**overrides)
    samples = _load_data(args)
    eval_samples = load_multiround(args.eval_data) if args.eval_data else None
    model, state, metrics = train(
        samples, config, eval_samples=eval_samples, metrics_path=args.metrics
    )
    save_checkpoint(args.out, model, meta={"seed": config.seed})
    last = metrics[-1] if metrics else {}
    print(f"checkpoint written to {args.out}")
    if last:
        print(
            f"final epoch: f1(round1)={last['f1_per_round'][1]:.4f} "
            f"expert_reward={last['mean_expert_reward']:.4f} "
            f"policy_reward={last['mean_policy_reward']:.4f}"
        )
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    samples = _load_data(args)
    rounds = args.rounds
    with_fb = evaluate(model, samples, rounds, use_feedback=True)
    no_fb = evaluate(model, samples, rounds, use_feedback=False)
    print(f"samples scored: {with_fb.n_scored} (skipped {with_fb.skipped} with fewer rounds)")
    print(f"opening parse slot F1: {with_fb.per_round[0].f1:.4f}")
    header = "model         " + "".join(f"      r{t}" for t in range(1, rounds + 1))
    print(header)
    for name, report in [("no-feedback  ", no_fb), ("with-feedback", with_fb)]:
        cells = "".join(f"  {report.per_round[t].f1:.4f}" for t in range(1, rounds + 1))
        print(name + cells)
    print("sentence accuracy")
    for name, report in [("no-feedback  ", no_fb), ("with-feedback", with_fb)]:
        cells = "".join(
            f"  {report.per_round[t].sentence_accuracy:.4f}" for t in range(1, rounds + 1)
        )
        print(name + cells)
    return 0


def _cmd_synth(args) -> int:
    samples, _ = make_synthetic_corpus(
        args.n, seed=args.seed, max_rounds=args.max_rounds, min_rounds=args.min_rounds
    )
    save_multiround(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradient_suite(seed=args.seed)
    print(format_suite(results))
    return 0 if all(r.ok for r in results) else 1


def _cmd_serve(args) -> int:
    from .service import SessionService, serve_forever

    model, _ = load_checkpoint(args.checkpoint)
    persist = None
    if args.persist_dir:
        d = Path(args.persist_dir)
        d.mkdir(parents=True, exist_ok=True)
        persist = d / "transcripts.jsonl"
    service = SessionService(
        model,
        max_rounds=args.max_rounds,
        sample_mode=args.debug_sample,
        persist_path=persist,
        checkpoint_name=args.checkpoint,
    )
    serve_forever(service, args.host, args.port, static_dir=args.static_dir)
    return 0


def _cmd_demo(args) -> int:
    from .demo import load_scenario, run_demo

    scenario = load_scenario(args.scenario)
    outcome = run_demo(scenario, seed=args.seed)
    return 0 if outcome["ok"] else 1


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "synth-data": _cmd_synth,
        "gradcheck": _cmd_gradcheck,
        "serve": _cmd_serve,
        "demo": _cmd_demo,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (TrainerError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # component errors surface with their type
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
