"""Command-line entry point: dataset generation, training, evaluation,
caption generation, per-step traces, and the twin-vs-baseline comparison.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import inference, report, taskgen, training
from .config import RunConfig, load_config
from .model import build_model, parameter_overhead
from .rng import SeededRng
from .taskgen import GenConfig, token_to_dict


class UsageError(Exception):
    pass


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load_run_config(args) -> RunConfig:
    overrides = _parse_overrides(getattr(args, "set", None))
    for flag in ("model", "epochs", "seed", "beam", "batch_size", "base_lr"):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[flag] = str(val)
    try:
        cfg = load_config(getattr(args, "config", None), overrides)
    except (ValueError, FileNotFoundError) as e:
        raise UsageError(str(e)) from e
    if getattr(args, "data", None):
        cfg.dataset = args.data
    if getattr(args, "out", None):
        cfg.output = args.out
    return cfg


def _load_dataset(path: str) -> list:
    if not path:
        raise UsageError("no dataset given (use --data or set 'dataset' in the config)")
    if not os.path.exists(path):
        raise UsageError(f"dataset not found: {path}")
    return taskgen.load_jsonl(path)


def _select_split(examples: list, split: str) -> list:
    if split == "all":
        return examples
    chosen = taskgen.split_examples(examples, split)
    if not chosen:
        raise RuntimeError(f"split {split!r} is empty for this dataset")
    return chosen


def cmd_gen(args) -> int:
    cfg = GenConfig(categories=args.categories, n_examples=args.examples,
                    noise_scale=args.noise_scale, d_v=args.d_v, d_c=args.d_c)
    examples = taskgen.generate(args.seed, cfg)
    taskgen.save_jsonl(examples, args.out)
    print(f"wrote {len(examples)} examples to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    examples = _load_dataset(cfg.dataset)
    out_dir = cfg.output or "."
    os.makedirs(out_dir, exist_ok=True)

    optimizer = None
    rng = None
    start_epoch = 0
    if args.resume:
        state = training.load_checkpoint(args.resume)
        model = state["model"]
        optimizer, rng, start_epoch = state["optimizer"], state["rng"], state["epoch"]
    else:
        model = build_model(cfg.to_model_config())

    train_cfg = cfg.to_train_config()
    rng = rng or SeededRng(train_cfg.seed)
    optimizer = optimizer or training.Adam(model.params, train_cfg.beta1, train_cfg.beta2,
                                           train_cfg.eps)
    log = training.train(examples, model, train_cfg, optimizer=optimizer, rng=rng,
                         start_epoch=start_epoch)

    epoch_done = log[-1]["epoch"] + 1 if log else start_epoch
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    training.save_checkpoint(ckpt_path, model, optimizer=optimizer, epoch=epoch_done,
                             rng=rng, train_cfg=train_cfg)
    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    with open(metrics_path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"type": "header", "model": model.cfg.to_dict(),
                            "train": vars(train_cfg)}) + "\n")
        for rec in log:
            f.write(json.dumps({"type": "epoch", **rec}) + "\n")
    if log:
        report.save_training_curves(log, os.path.join(out_dir, "training.png"))
    final = log[-1] if log else {}
    print(f"trained {epoch_done} epochs; checkpoint: {ckpt_path}; metrics: {metrics_path}")
    if final:
        print(f"final train_loss={final['train_loss']:.4f} accuracy={final['accuracy']:.4f}")
    return 0


def cmd_eval(args) -> int:
    state = training.load_checkpoint(args.ckpt)
    model = state["model"]
    examples = _select_split(_load_dataset(args.data), args.split)
    metrics = inference.evaluate_model(model, examples, beam=args.beam,
                                       max_len=model.cfg.max_len)
    text = json.dumps(metrics, indent=2)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    return 0


def cmd_generate(args) -> int:
    state = training.load_checkpoint(args.ckpt)
    model = state["model"]
    examples = _load_dataset(args.data)[:args.n]
    for ex in examples:
        if args.beam == 1:
            tokens = inference.greedy_decode(model, ex.regions, model.cfg.max_len)
        else:
            tokens, _ = inference.beam_decode(model, ex.regions, beam=args.beam,
                                              max_len=model.cfg.max_len)
        print(" ".join(inference.tokens_to_words(tokens, bracket_slots=True)))
    return 0


def cmd_trace(args) -> int:
    state = training.load_checkpoint(args.ckpt)
    model = state["model"]
    examples = _load_dataset(args.data)
    if not (0 <= args.example_index < len(examples)):
        raise UsageError(f"example index {args.example_index} out of range "
                         f"(dataset has {len(examples)} examples)")
    ex = examples[args.example_index]
    records = []
    dec_state = model.init_state()
    for t in range(1, len(ex.tokens)):
        dist, out, dec_state = model.step(dec_state, ex.tokens[t - 1], ex.regions)
        _, chosen = inference.argmax_token(dist)
        rec = {"step": t - 1,
               "p_sentinel": dist.p_sentinel,
               "alphas": {k: v.data.tolist() for k, v in out.alphas.items()},
               "chosen_token": token_to_dict(chosen),
               "target_token": token_to_dict(ex.tokens[t])}
        if model.cfg.kind == "ntt":
            rec["g1"] = out.g1.data.tolist()
            rec["g2"] = out.g2.data.tolist()
            rec["g3"] = out.g3.data.tolist()
        records.append(rec)
    text = json.dumps(records, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_compare(args) -> int:
    cfg = _load_run_config(args)
    examples = _load_dataset(cfg.dataset)
    out_dir = cfg.output or "."
    os.makedirs(out_dir, exist_ok=True)
    eval_examples = taskgen.split_examples(examples, cfg.eval_split) or examples

    per_seed: dict[str, list[dict]] = {"ntt": [], "baseline": []}
    param_counts: dict[str, int] = {}
    models_for_overhead = {}
    for kind in ("ntt", "baseline"):
        for i in range(args.seeds):
            seed = cfg.seed + i
            mc = cfg.to_model_config()
            mc.kind = kind
            mc.init_seed = seed
            model = build_model(mc)
            tc = cfg.to_train_config()
            tc.seed = seed
            training.train(examples, model, tc)
            metrics = inference.evaluate_model(model, eval_examples, beam=cfg.beam,
                                               max_len=cfg.max_len)
            per_seed[kind].append(metrics)
            if i == 0:
                param_counts[kind] = model.param_count()
                models_for_overhead[kind] = model

    overhead = parameter_overhead(models_for_overhead["ntt"], models_for_overhead["baseline"])
    compare = {
        "seeds": [cfg.seed + i for i in range(args.seeds)],
        "eval_split": cfg.eval_split,
        "models": {},
        "parameter_overhead": overhead["total_overhead"],
        "decoder_parameter_overhead": overhead["decoder_overhead"],
        "per_seed": per_seed,
    }
    for kind in ("ntt", "baseline"):
        stats = {}
        for key in report.METRIC_KEYS:
            vals = np.array([m[key] for m in per_seed[kind]])
            stats[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
        stats["params"] = param_counts[kind]
        compare["models"][kind] = stats

    json_path = os.path.join(out_dir, "compare.json")
    with open(json_path, "w", encoding="utf-8") as f:
        f.write(json.dumps(compare, indent=2) + "\n")
    report.write_compare_csv(compare, os.path.join(out_dir, "compare.csv"))
    report.save_comparison_chart(compare, os.path.join(out_dir, "compare.png"))
    print(report.format_compare_table(compare))
    print(f"wrote {json_path}, compare.csv, compare.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twincap",
                                     description="Twin cascaded-attention captioner")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset (JSONL)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--examples", type=int, default=100)
    p.add_argument("--categories", type=int, default=6)
    p.add_argument("--noise-scale", type=float, default=0.1, dest="noise_scale")
    p.add_argument("--d-v", type=int, default=16, dest="d_v")
    p.add_argument("--d-c", type=int, default=16, dest="d_c")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model, write checkpoint + metrics")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--model", choices=["ntt", "baseline"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--base-lr", type=float, dest="base_lr")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="decode a split and report metrics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--beam", type=int, default=3)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="print captions with bracketed grounded words")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--beam", type=int, default=3)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("trace", help="per-step JSON trace of one example")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--example-index", type=int, required=True, dest="example_index")
    p.add_argument("--out")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("compare", help="train twin and baseline over several seeds")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
