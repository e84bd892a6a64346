"""Command-line entry points tying sampling, training, inference and evaluation together."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from .bandit import StopThresholds
from .core import ActionId
from .io import (
    DatasetFormatError,
    UnsupportedFormatError,
    load_dataset,
    load_lexicon,
    load_scenes,
    parse_config,
    save_dataset,
)
from .metrics import rm_loss_std
from .model import LossWeights, load_weights, save_weights, train_rm
from .pipeline import prepare_scenes, run_inference_batch, run_sampling_by_name
from .report import evaluate_strategies, write_report

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _build_parser() -> _Parser:
    parser = _Parser(prog="promptwalk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", parents=[], help="bandit-sample trajectories over scenes")
    p.add_argument("--scenes", required=True, help="scene spec JSONL file")
    p.add_argument("--lexicon", default=None, help="lexicon TSV (default: bundled)")
    p.add_argument("--policy", choices=["ucb", "random", "greedy", "eps"], default=None)
    p.add_argument("--lambda", dest="explore", type=float, default=None,
                   help="UCB exploration strength (default 1.0)")
    p.add_argument("--w-gt", dest="w_gt", type=float, default=None,
                   help="ground-truth weight in the step reward blend (default 0.5)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output dataset JSONL")
    p.add_argument("--config", default=None, help="key=value config file")

    p = sub.add_parser("train-rm", help="train the reward/policy model offline")
    p.add_argument("--data", required=True, help="trajectory dataset JSONL")
    p.add_argument("--beta", type=float, default=None, help="reward term weight (default 1.0)")
    p.add_argument("--gamma", type=float, default=None, help="KL term weight (default 0.1)")
    p.add_argument("--epochs", type=int, default=None, help="training epochs (default 30)")
    p.add_argument("--lr", type=float, default=None, help="SGD learning rate (default 0.05)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output weight file")
    p.add_argument("--loss-out", default=None,
                   help="loss history JSON (default: <out>.loss.json)")
    p.add_argument("--config", default=None)

    p = sub.add_parser("infer", help="run model-guided inference over scenes")
    p.add_argument("--rm", required=True, help="trained weight file")
    p.add_argument("--scenes", required=True)
    p.add_argument("--mode", choices=["policy", "reward", "hybrid"], default=None)
    p.add_argument("--alpha", type=float, default=None,
                   help="hybrid blend weight (default 0.5)")
    p.add_argument("--trace-out", required=True, help="output trace JSONL")
    p.add_argument("--lexicon", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--w-gt", dest="w_gt", type=float, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval-exploration", help="compare exploration strategies")
    p.add_argument("--scenes", required=True)
    p.add_argument("--strategies", default=None,
                   help="comma list from {ucb,eps,greedy,random} (default all four)")
    p.add_argument("--seeds", default=None, help="comma list of seeds (default 0,1,2)")
    p.add_argument("--report", required=True,
                   help="report text path; JSON and figures are written alongside")
    p.add_argument("--lexicon", default=None)
    p.add_argument("--lambda", dest="explore", type=float, default=None)
    p.add_argument("--w-gt", dest="w_gt", type=float, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("inspect", help="pretty-print a trajectory dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    return parser


def _resolver(args: argparse.Namespace) -> Callable:
    config = parse_config(args.config) if getattr(args, "config", None) else {}

    def resolve(name: str, default, cast=None):
        value = getattr(args, name, None)
        if value is not None:
            return value
        if name in config:
            raw = config[name]
            return cast(raw) if cast else raw
        return default

    return resolve


def _cmd_sample(args: argparse.Namespace) -> int:
    resolve = _resolver(args)
    specs = load_scenes(args.scenes)
    if not specs:
        print("error: scenes file is empty", file=sys.stderr)
        return EXIT_VALIDATION
    lexicon = load_lexicon(resolve("lexicon", None))
    prepared = prepare_scenes(specs, lexicon)
    batch = run_sampling_by_name(
        prepared,
        lexicon,
        policy_name=resolve("policy", "ucb"),
        seed=resolve("seed", 0, int),
        thresholds=StopThresholds(),
        explore=resolve("explore", 1.0, float),
        gt_weight=resolve("w_gt", 0.5, float),
    )
    save_dataset(batch.records, args.out)
    print(f"sampled {len(batch.records)} images -> {args.out}")
    return EXIT_OK


def _cmd_train_rm(args: argparse.Namespace) -> int:
    resolve = _resolver(args)
    records = load_dataset(args.data)
    if not records:
        print("error: dataset is empty", file=sys.stderr)
        return EXIT_VALIDATION
    loss_weights = LossWeights(
        beta=resolve("beta", 1.0, float), gamma=resolve("gamma", 0.1, float)
    )
    result = train_rm(
        records,
        loss_weights=loss_weights,
        epochs=resolve("epochs", 30, int),
        lr=resolve("lr", 0.05, float),
        seed=resolve("seed", 0, int),
    )
    with open(args.out, "wb") as fh:
        save_weights(result.weights, fh)
    loss_out = resolve("loss_out", f"{args.out}.loss.json")
    Path(loss_out).write_text(
        json.dumps(
            {
                "loss_history": result.loss_history,
                "loss_std_tail": rm_loss_std(result.loss_history)
                if len(result.loss_history) >= 2
                else None,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        + "\n",
        encoding="utf-8",
    )
    print(
        f"trained on {len(records)} images, final loss {result.loss_history[-1]:.6f} "
        f"-> {args.out}"
    )
    return EXIT_OK


def _trace_to_json(trace) -> str:
    box = trace.final_detection.top_box()
    obj = {
        "image_id": trace.image_id,
        "actions": [a.name.lower() for a in trace.actions],
        "rewards": trace.rewards,
        "steps": len(trace.actions),
        "final_prompt": trace.final_prompt.render(),
        "final_box": [box.x_min, box.y_min, box.x_max, box.y_max],
        "initial_iou": trace.initial_iou,
        "final_iou": trace.final_iou,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _cmd_infer(args: argparse.Namespace) -> int:
    resolve = _resolver(args)
    with open(args.rm, "rb") as fh:
        weights = load_weights(fh)
    specs = load_scenes(args.scenes)
    if not specs:
        print("error: scenes file is empty", file=sys.stderr)
        return EXIT_VALIDATION
    lexicon = load_lexicon(resolve("lexicon", None))
    prepared = prepare_scenes(specs, lexicon)
    traces = run_inference_batch(
        prepared,
        lexicon,
        weights,
        seed=resolve("seed", 0, int),
        mode=resolve("mode", "policy"),
        alpha=resolve("alpha", 0.5, float),
        gt_weight=resolve("w_gt", 0.5, float),
    )
    with open(args.trace_out, "w", encoding="utf-8", newline="\n") as fh:
        for trace in sorted(traces, key=lambda t: t.image_id):
            fh.write(_trace_to_json(trace))
            fh.write("\n")
    mean_reward = sum(sum(t.rewards) / len(t.rewards) for t in traces if t.rewards)
    n_nonempty = sum(1 for t in traces if t.rewards)
    if n_nonempty:
        print(
            f"inferred {len(traces)} scenes, mean trace reward "
            f"{mean_reward / n_nonempty:.4f} -> {args.trace_out}"
        )
    else:
        print(f"inferred {len(traces)} scenes -> {args.trace_out}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    resolve = _resolver(args)
    specs = load_scenes(args.scenes)
    if not specs:
        print("error: scenes file is empty", file=sys.stderr)
        return EXIT_VALIDATION
    lexicon = load_lexicon(resolve("lexicon", None))
    strategies = [
        s.strip() for s in resolve("strategies", "ucb,eps,greedy,random").split(",")
    ]
    seeds = [int(s) for s in str(resolve("seeds", "0,1,2")).split(",")]
    report = evaluate_strategies(
        specs,
        lexicon,
        strategies=strategies,
        seeds=seeds,
        explore=resolve("explore", 1.0, float),
        gt_weight=resolve("w_gt", 0.5, float),
    )
    written = write_report(report, args.report)
    print("wrote " + ", ".join(str(p) for p in written))
    return EXIT_OK


def _cmd_inspect(args: argparse.Namespace) -> int:
    records = load_dataset(args.data)
    if not records:
        print("dataset is empty")
        return EXIT_OK
    for record in records:
        rewards = record.step_rewards()
        mean_reward = sum(rewards) / len(rewards) if rewards else 0.0
        print(f"image {record.image_id}: {record.budget} trajectories, "
              f"{len(rewards)} steps, mean reward {mean_reward:.4f}")
        if record.aborted_episodes:
            print(f"  aborted episodes: {list(record.aborted_episodes)}")
        for i, traj in enumerate(record.trajectories[:3]):
            seq = " -> ".join(ActionId(s.action).name.lower() for s in traj)
            print(f"  traj {i}: {seq if seq else '(empty)'}")
        if record.budget > 3:
            print(f"  ... {record.budget - 3} more trajectories")
        print("  posterior rows (state: successors 1..7):")
        for state in range(8):
            row = record.transition_posterior[state, 1:]
            print(f"    {state}: " + " ".join(f"{v:.3f}" for v in row))
    return EXIT_OK


_COMMANDS = {
    "sample": _cmd_sample,
    "train-rm": _cmd_train_rm,
    "infer": _cmd_infer,
    "eval-exploration": _cmd_eval,
    "inspect": _cmd_inspect,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point. Returns 0 on success, 1 on validation errors, 2 on I/O errors."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (DatasetFormatError, UnsupportedFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
