"""Command-line entry point: task generation, training, evaluation, suites.

Subcommands:

    gen    write a synthetic few-shot task (manifest + tensor files)
    train  train one method on a task and write a report + prompt tensors
    eval   evaluate trained prompts or exported weight sets on the test split
    suite  run a seed-sweep comparison grid and aggregate the results

Reports are JSON. Everything that affects results (config, seeds, PRNG
algorithm) is echoed into the report so a run can be reproduced
byte-for-byte; wall-clock timing goes to a separate ``timing.json`` so the
main report stays deterministic. Exit codes: 0 success, 2 usage error,
3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .autodiff import NonFiniteError, ShapeError, Tensor
from .dataio import (DataError, DataFormatError, FewShotTask,
                     encoder_from_manifest, file_sha256, gen_synthetic_task,
                     load_task, read_embedding, save_task, write_embedding)
from .distribution import estimate_distribution, generate_weights
from .encoder import EncoderConfig, Position, Prompt, PromptCollection, TextEncoder
from .inference import MetricKind, ensemble_weights
from .losses import NumericError, sample_weight_draws
from .rng import PRNG_ALGORITHM
from .training import (ABLATION_VARIANTS, TrainConfig, _metric_value,
                       run_ablation, train_coop_baseline, train_linear_probe,
                       train_proda, zero_shot_accuracy)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# Hyperparameters for the bundled toy encoder and synthetic tasks. The
# pretrained-scale defaults in TrainConfig (base_lr 0.001, tau 0.01) assume a
# real encoder's Jacobian scale; the toy encoder trains well with these.
SUITE_BASE_LR = 0.02
SUITE_TAU = 0.05
SUITE_PROMPT_BATCH = 8


def _dump_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _config_doc(config: TrainConfig) -> dict:
    return {
        "epochs": config.epochs, "image_batch": config.image_batch,
        "prompt_batch": config.prompt_batch, "base_lr": config.base_lr,
        "lr_batch_divisor": config.lr_batch_divisor, "momentum": config.momentum,
        "num_prompts": config.num_prompts, "prompt_len": config.prompt_len,
        "seed": config.seed, "lambda": config.lam, "tau": config.tau,
        "cov_mode": config.cov_mode.value, "estimator": config.estimator.value,
        "no_upper": config.no_upper, "no_pos_div": config.no_pos_div,
        "no_sem_orth": config.no_sem_orth, "grad_clip": config.grad_clip,
        "encoder_kind": config.encoder_kind.value,
        "encoder_hidden": config.encoder_hidden,
        "encoder_seed": config.encoder_seed,
    }


def _train_config_from_args(args, seed: int | None = None) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, image_batch=args.image_batch,
        prompt_batch=args.prompt_batch, base_lr=args.lr, momentum=args.momentum,
        num_prompts=args.prompts, prompt_len=args.prompt_len,
        seed=args.seed if seed is None else seed,
        lam=getattr(args, "lam", 0.1), tau=args.tau, cov_mode=args.cov,
        grad_clip=args.grad_clip,
        encoder_kind=args.encoder, encoder_hidden=args.encoder_hidden,
        encoder_seed=args.encoder_seed)


def _task_encoder(task: FewShotTask, config: TrainConfig) -> TextEncoder:
    if task.manifest is not None and task.manifest.encoder is not None:
        return encoder_from_manifest(task.manifest, task.name_tokens.embed_dim)
    return TextEncoder(EncoderConfig(kind=config.encoder_kind,
                                     embed_dim=task.name_tokens.embed_dim,
                                     hidden_dim=config.encoder_hidden,
                                     out_dim=task.dim, seed=config.encoder_seed))


# -- gen -------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.shots < 1:
        raise UsageError("--shots must be >= 1")
    if args.classes < 2:
        raise UsageError("--classes must be >= 2")
    encoder_config = EncoderConfig(kind=args.encoder, embed_dim=args.embed_dim,
                                   hidden_dim=args.encoder_hidden, out_dim=args.dim,
                                   seed=args.encoder_seed)
    encoder = TextEncoder(encoder_config)
    task = gen_synthetic_task(args.classes, args.shots, args.dim, args.noise,
                              seed=args.seed, encoder=encoder,
                              center_shift=args.center_shift,
                              class_spread=args.class_spread,
                              metric=MetricKind(args.metric))
    out_dir = os.path.join(args.workdir, args.out)
    manifest_path = save_task(task, out_dir, encoder_config=encoder_config)
    listing = sorted(os.listdir(out_dir))
    print(f"wrote {manifest_path} ({len(listing)} files)")
    for name in listing:
        print(f"  {name}  sha256={file_sha256(os.path.join(out_dir, name))[:16]}")
    return EXIT_OK


# -- train -----------------------------------------------------------------


def _save_collection(collection: PromptCollection, out_dir: str) -> dict[str, str]:
    tokens = np.stack([p.tokens.data for p in collection])
    positions = np.array([list(Position).index(p.position) for p in collection],
                         dtype=np.uint32)
    token_path = os.path.join(out_dir, "prompt_tokens.pdle")
    pos_path = os.path.join(out_dir, "prompt_positions.pdle")
    write_embedding(token_path, tokens, "f64")
    write_embedding(pos_path, positions, "u32")
    return {"prompt_tokens.pdle": file_sha256(token_path),
            "prompt_positions.pdle": file_sha256(pos_path)}


def load_collection(prompt_dir: str, seed: int = 0) -> PromptCollection:
    tokens = read_embedding(os.path.join(prompt_dir, "prompt_tokens.pdle"))
    positions = read_embedding(os.path.join(prompt_dir, "prompt_positions.pdle"))
    order = list(Position)
    prompts = [Prompt(tokens=Tensor(tokens[i].astype(np.float64), requires_grad=True),
                      position=order[int(positions[i])])
               for i in range(tokens.shape[0])]
    return PromptCollection(prompts=prompts, seed=seed)


def cmd_train(args) -> int:
    manifest_path = os.path.join(args.workdir, args.manifest)
    task = load_task(manifest_path, shots=args.shots)
    config = _train_config_from_args(args)
    encoder = _task_encoder(task, config)
    out_dir = os.path.join(args.workdir, args.out)
    os.makedirs(out_dir, exist_ok=True)

    method = args.method
    started = time.time()
    report: dict = {"method": method, "config": _config_doc(config),
                    "manifest": args.manifest, "prng": PRNG_ALGORITHM,
                    "version": __version__,
                    "metric": task.metric.value}
    if method == "linear-probe":
        result = train_linear_probe(task, config)
        report["accuracy"] = result.test_accuracy
        report["train_accuracy"] = result.train_accuracy
        weights_path = os.path.join(out_dir, "probe_weights.pdle")
        write_embedding(weights_path, result.weights, "f64")
        report["artifacts"] = {"probe_weights.pdle": file_sha256(weights_path)}
    elif method == "zeroshot":
        report["accuracy"] = zero_shot_accuracy(task, encoder)
        report["artifacts"] = {}
    else:
        if method == "proda":
            history = train_proda(task, config, encoder=encoder)
        elif method == "coop":
            history = train_coop_baseline(task, config, encoder=encoder)
        elif method.startswith("ablation:"):
            variant = method.split(":", 1)[1]
            if variant not in ABLATION_VARIANTS:
                raise UsageError(f"unknown ablation variant {variant!r}")
            history = run_ablation(task, config, variant, encoder=encoder)
        else:
            raise UsageError(f"unknown method {method!r}")
        report["accuracy"] = history.final_accuracy
        report["objective"] = history.objective
        report["encoder_fingerprint"] = history.encoder_fingerprint
        report["loss_traces"] = history.loss_traces()
        report["artifacts"] = _save_collection(history.collection, out_dir)
    report_path = os.path.join(out_dir, "report.json")
    _dump_json(report_path, report)
    _dump_json(os.path.join(out_dir, "timing.json"),
               {"wall_clock_seconds": time.time() - started})
    print(f"{method}: accuracy={report['accuracy']:.4f} -> {report_path}")
    return EXIT_OK


# -- eval ------------------------------------------------------------------


def cmd_eval(args) -> int:
    manifest_path = os.path.join(args.workdir, args.manifest)
    task = load_task(manifest_path)
    config = _train_config_from_args(args)
    metric = MetricKind(args.metric) if args.metric else task.metric
    started = time.time()
    report: dict = {"manifest": args.manifest, "infer": args.infer,
                    "metric": metric.value, "tau": args.tau,
                    "prng": PRNG_ALGORITHM, "version": __version__}

    if args.weight_sets:
        sets = read_embedding(os.path.join(args.workdir, args.weight_sets))
        if sets.ndim != 3:
            raise DataError(f"weight sets must be rank 3 [P, C, d], got {sets.shape}")
        sets = sets.astype(np.float64)
        report["weight_sets"] = args.weight_sets
        report["num_sets"] = int(sets.shape[0])
        per_prompt = sets
    else:
        encoder = _task_encoder(task, config)
        if args.prompts_dir:
            collection = load_collection(os.path.join(args.workdir, args.prompts_dir))
        else:
            collection = None
        if args.infer == "zeroshot" or collection is None:
            per_prompt = np.stack([encoder.encode_text(task.name_tokens[c]).data
                                   for c in range(task.num_classes)])[None]
        else:
            samples = generate_weights(encoder, list(collection), task.name_tokens)
            per_prompt = samples.weights.data

    test_z, test_y = task.test_z, task.test_y
    if args.infer == "mean":
        from .distribution import WeightSamples
        samples = WeightSamples(weights=Tensor(per_prompt), prompt_indices=list(range(per_prompt.shape[0])))
        dist = estimate_distribution(samples, config.loss_config())
        pred = np.argmax(test_z @ dist.mu_array.T, axis=1)
    elif args.infer == "mc":
        from .distribution import WeightSamples
        samples = WeightSamples(weights=Tensor(per_prompt), prompt_indices=list(range(per_prompt.shape[0])))
        dist = estimate_distribution(samples, config.loss_config())
        if args.mode == "gaussian":
            sampled = sample_weight_draws(dist, args.draws, args.seed)
        else:
            rng = np.random.default_rng(args.seed)
            sampled = per_prompt[rng.integers(0, per_prompt.shape[0], size=args.draws)]
        probs = np.zeros((test_z.shape[0], task.num_classes))
        for lo in range(0, sampled.shape[0], 512):
            block = sampled[lo:lo + 512]
            logits = np.einsum("nd,scd->nsc", test_z, block) / args.tau
            logits -= logits.max(axis=2, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=2, keepdims=True)
            probs += p.sum(axis=1)
        pred = np.argmax(probs, axis=1)
        report["draws"] = args.draws
        report["mode"] = args.mode
    elif args.infer in ("ensemble", "zeroshot"):
        if args.infer == "zeroshot":
            weights = per_prompt[0]
        elif args.average_probs:
            probs = np.zeros((test_z.shape[0], task.num_classes))
            for w in per_prompt:
                logits = test_z @ w.T / args.tau
                logits -= logits.max(axis=1, keepdims=True)
                p = np.exp(logits)
                probs += p / p.sum(axis=1, keepdims=True)
            pred = np.argmax(probs, axis=1)
            weights = None
        else:
            weights = ensemble_weights(per_prompt)
        if weights is not None:
            pred = np.argmax(test_z @ weights.T, axis=1)
    else:
        raise UsageError(f"unknown inference mode {args.infer!r}")

    report["accuracy"] = _metric_value(pred, test_y, metric, task.num_classes)
    out_dir = os.path.join(args.workdir, args.out)
    os.makedirs(out_dir, exist_ok=True)
    if args.dump_weights:
        dump_path = os.path.join(args.workdir, args.dump_weights)
        write_embedding(dump_path, per_prompt, "f64")
        report["dumped_weights"] = {args.dump_weights: file_sha256(dump_path)}
    report_path = os.path.join(out_dir, "report.json")
    _dump_json(report_path, report)
    _dump_json(os.path.join(out_dir, "timing.json"),
               {"wall_clock_seconds": time.time() - started})
    print(f"eval[{args.infer}]: accuracy={report['accuracy']:.4f} -> {report_path}")
    return EXIT_OK


# -- suite -----------------------------------------------------------------


def _parse_seeds(spec: str) -> list[int]:
    seeds = []
    for part in spec.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise UsageError("empty seed list")
    return seeds


def _suite_cell(task: FewShotTask, encoder: TextEncoder, method: str,
                config: TrainConfig) -> float:
    if method == "proda":
        return train_proda(task, config, encoder=encoder).final_accuracy
    if method == "coop":
        return train_coop_baseline(task, config, encoder=encoder).final_accuracy
    if method == "zeroshot":
        return zero_shot_accuracy(task, encoder)
    if method == "linear-probe":
        return train_linear_probe(task, config).test_accuracy
    if method.startswith("ablation:"):
        variant = method.split(":", 1)[1]
        return run_ablation(task, config, variant, encoder=encoder).final_accuracy
    raise UsageError(f"unknown method {method!r}")


def cmd_suite(args) -> int:
    seeds = _parse_seeds(args.seeds)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise UsageError("no methods given")
    shots_list = [int(s) for s in args.shots.split(",")]
    k_values = [int(k) for k in args.k_sweep.split(",")] if args.k_sweep else None

    encoder_config = EncoderConfig(kind=args.encoder, embed_dim=args.embed_dim,
                                   hidden_dim=args.encoder_hidden, out_dim=args.dim,
                                   seed=args.encoder_seed)
    encoder = TextEncoder(encoder_config)
    started = time.time()

    def make_config(seed: int, num_prompts: int | None = None) -> TrainConfig:
        return TrainConfig(epochs=args.epochs, image_batch=args.image_batch,
                           prompt_batch=min(args.prompt_batch,
                                            num_prompts or args.prompts),
                           base_lr=args.lr, momentum=args.momentum,
                           num_prompts=num_prompts or args.prompts,
                           prompt_len=args.prompt_len, seed=seed, lam=args.lam,
                           tau=args.tau, cov_mode=args.cov,
                           encoder_kind=args.encoder,
                           encoder_hidden=args.encoder_hidden,
                           encoder_seed=args.encoder_seed)

    jobs = []
    for shots in shots_list:
        for seed in seeds:
            for method in methods:
                jobs.append((method, shots, seed, args.prompts))
            if k_values and "proda" in methods:
                for k in k_values:
                    if not ("proda" in methods and k == args.prompts):
                        jobs.append(("proda", shots, seed, k))

    task_cache: dict[tuple[int, int], FewShotTask] = {}

    def get_task(shots: int, seed: int) -> FewShotTask:
        key = (shots, seed)
        if key not in task_cache:
            task_cache[key] = gen_synthetic_task(
                args.classes, shots, args.dim, args.noise, seed=seed,
                encoder=encoder, center_shift=args.center_shift,
                class_spread=args.class_spread)
        return task_cache[key]

    def run_job(job):
        method, shots, seed, k = job
        try:
            acc = _suite_cell(get_task(shots, seed), encoder, method,
                              make_config(seed, num_prompts=k))
            return {"method": method, "shots": shots, "seed": seed, "k": k,
                    "accuracy": acc}, None
        except (DataError, DataFormatError, NumericError, NonFiniteError,
                ValueError) as exc:
            return None, {"method": method, "shots": shots, "seed": seed, "k": k,
                          "error": f"{type(exc).__name__}: {exc}"}

    cells, failures = [], []
    threads = int(os.environ.get("PROMPTDIST_THREADS", "1"))
    if threads > 1:
        # Deterministic despite the pool: the merge below sorts the cells.
        from concurrent.futures import ThreadPoolExecutor
        for shots in shots_list:
            for seed in seeds:
                get_task(shots, seed)  # sequential generation, shared stream
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_job, jobs))
    else:
        outcomes = [run_job(job) for job in jobs]
    for cell, failure in outcomes:
        if cell is not None:
            cells.append(cell)
        else:
            failures.append(failure)

    cells.sort(key=lambda c: (c["method"], c["shots"], c["k"], c["seed"]))
    failures.sort(key=lambda c: (c["method"], c["shots"], c["k"], c["seed"]))
    aggregates = []
    groups: dict[tuple, list[float]] = {}
    for cell in cells:
        groups.setdefault((cell["method"], cell["shots"], cell["k"]), []).append(
            cell["accuracy"])
    for (method, shots, k), values in sorted(groups.items()):
        arr = np.array(values)
        aggregates.append({"method": method, "shots": shots, "k": k,
                           "mean": float(arr.mean()),
                           "std": float(arr.std(ddof=1)) if len(values) > 1 else 0.0,
                           "n": len(values)})

    report = {"version": __version__, "prng": PRNG_ALGORITHM,
              "config": {"classes": args.classes, "dim": args.dim,
                         "noise": args.noise, "center_shift": args.center_shift,
                         "class_spread": args.class_spread,
                         "embed_dim": args.embed_dim,
                         "encoder": encoder_config.kind.value,
                         "encoder_hidden": args.encoder_hidden,
                         "encoder_seed": args.encoder_seed,
                         "encoder_fingerprint": encoder.weights_fingerprint(),
                         "seeds": seeds, "methods": methods, "shots": shots_list,
                         "k_sweep": k_values,
                         "train": _config_doc(make_config(seeds[0]))},
              "cells": cells, "aggregates": aggregates, "failures": failures}
    out_dir = os.path.join(args.workdir, args.out)
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "report.json")
    _dump_json(report_path, report)
    _dump_json(os.path.join(out_dir, "timing.json"),
               {"wall_clock_seconds": time.time() - started})
    if args.table:
        print(render_table(aggregates))
    print(f"suite: {len(cells)} cells, {len(failures)} failures -> {report_path}")
    return EXIT_OK


def render_table(aggregates: list[dict]) -> str:
    header = f"{'method':<22} {'shots':>5} {'K':>4} {'mean':>8} {'std':>8} {'n':>4}"
    lines = [header, "-" * len(header)]
    for row in aggregates:
        lines.append(f"{row['method']:<22} {row['shots']:>5} {row['k']:>4} "
                     f"{row['mean']:>8.4f} {row['std']:>8.4f} {row['n']:>4}")
    return "\n".join(lines)


# -- argument plumbing -------------------------------------------------------


class UsageError(ValueError):
    pass


def _add_common_train_flags(parser: argparse.ArgumentParser,
                            lr_default: float = 0.001,
                            tau_default: float = 0.01,
                            prompt_batch_default: int = 4) -> None:
    parser.add_argument("--prompts", type=int, default=32,
                        help="prompt collection size K")
    parser.add_argument("--prompt-len", type=int, default=16)
    parser.add_argument("--prompt-batch", type=int, default=prompt_batch_default)
    parser.add_argument("--image-batch", type=int, default=20)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--lr", type=float, default=lr_default,
                        help="base learning rate (scaled by image_batch / 5)")
    parser.add_argument("--momentum", type=float, default=0.9)
    parser.add_argument("--lambda", dest="lam", type=float, default=0.1)
    parser.add_argument("--tau", type=float, default=tau_default)
    parser.add_argument("--cov", choices=["diag", "full"], default="diag")
    parser.add_argument("--grad-clip", type=float, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--encoder", choices=["meanpool", "attention"],
                        default="meanpool")
    parser.add_argument("--encoder-hidden", type=int, default=64)
    parser.add_argument("--encoder-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptdist",
        description="Prompt distribution learning harness")
    parser.add_argument("--workdir", default=".",
                        help="base directory for all relative paths")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic few-shot task")
    gen.add_argument("--classes", type=int, default=10)
    gen.add_argument("--shots", type=int, default=1)
    gen.add_argument("--dim", type=int, default=32)
    gen.add_argument("--noise", type=float, default=0.6)
    gen.add_argument("--center-shift", type=float, default=1.0)
    gen.add_argument("--class-spread", type=float, default=0.3)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--metric", choices=["accuracy", "mean-per-class"],
                     default="accuracy")
    gen.add_argument("--embed-dim", type=int, default=32)
    gen.add_argument("--encoder", choices=["meanpool", "attention"],
                     default="meanpool")
    gen.add_argument("--encoder-hidden", type=int, default=64)
    gen.add_argument("--encoder-seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(fn=cmd_gen)

    train = sub.add_parser("train", help="train a method on a task")
    train.add_argument("--manifest", required=True)
    train.add_argument("--method", default="proda",
                       help="proda | coop | linear-probe | zeroshot | "
                            "ablation:<no_upper|no_pos_div|no_sem_orth>")
    train.add_argument("--shots", type=int, default=None,
                       help="subsample the task to this many shots per class")
    train.add_argument("--out", required=True)
    _add_common_train_flags(train)
    train.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="evaluate prompts or weight sets")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--prompts-dir", default=None,
                    help="directory written by `train` with prompt tensors")
    ev.add_argument("--weight-sets", default=None,
                    help="rank-3 [P, C, d] tensor file of per-prompt class weights")
    ev.add_argument("--infer", choices=["mean", "mc", "ensemble", "zeroshot"],
                    default="mean")
    ev.add_argument("--draws", type=int, default=1000)
    ev.add_argument("--mode", choices=["gaussian", "empirical"], default="gaussian")
    ev.add_argument("--average-probs", action="store_true",
                    help="ensemble averages softmax outputs instead of embeddings")
    ev.add_argument("--metric", choices=["accuracy", "mean-per-class"], default=None)
    ev.add_argument("--dump-weights", default=None,
                    help="write all per-prompt class weights to this tensor file")
    ev.add_argument("--out", required=True)
    _add_common_train_flags(ev)
    ev.set_defaults(fn=cmd_eval)

    suite = sub.add_parser("suite", help="seed-sweep comparison grid")
    suite.add_argument("--seeds", default="0..19", help="e.g. 0..19 or 0,3,7")
    suite.add_argument("--methods", default="proda,coop,zeroshot")
    suite.add_argument("--shots", default="1", help="comma list of shot counts")
    suite.add_argument("--k-sweep", default=None,
                       help="comma list of collection sizes, e.g. 4,8,16,32")
    suite.add_argument("--classes", type=int, default=10)
    suite.add_argument("--dim", type=int, default=32)
    suite.add_argument("--noise", type=float, default=0.6)
    suite.add_argument("--center-shift", type=float, default=1.0)
    suite.add_argument("--class-spread", type=float, default=0.3)
    suite.add_argument("--embed-dim", type=int, default=32)
    suite.add_argument("--table", action="store_true",
                       help="print an aligned text table of the aggregates")
    suite.add_argument("--out", required=True)
    _add_common_train_flags(suite, lr_default=SUITE_BASE_LR,
                            tau_default=SUITE_TAU,
                            prompt_batch_default=SUITE_PROMPT_BATCH)
    suite.set_defaults(fn=cmd_suite)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps({"error": str(exc), "kind": "usage"}), file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DataFormatError, FileNotFoundError) as exc:
        print(json.dumps({"error": str(exc), "kind": "data"}), file=sys.stderr)
        return EXIT_DATA
    except (NumericError, NonFiniteError, ShapeError, np.linalg.LinAlgError) as exc:
        print(json.dumps({"error": str(exc), "kind": "numeric"}), file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
