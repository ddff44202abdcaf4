"""``bpglab`` command line: one subcommand per pipeline stage."""

import argparse
import json
import sys

from .harness import (ConfigError, ExperimentConfig, NumericError, cmd_eval, cmd_gen_pool, cmd_make_corpus,
                      cmd_train_ml, cmd_train_rl, format_summary, run_pipeline, summarize)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bpglab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out", help="output root (BPGLAB_OUT takes precedence)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set rl.alpha=0.02")
    jobs = _Parser(add_help=False)
    jobs.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    rl = _Parser(add_help=False)
    rl.add_argument("--variant", choices=["bpg", "bpg-nis", "opg"], type=str.lower)
    rl.add_argument("--critic", choices=["constant", "gtd"])
    rl.add_argument("--lambda", dest="lam", help="one value or a comma-separated sweep, e.g. 0.1,0.5,0.99")
    rl.add_argument("--epochs", type=int)
    rl.add_argument("--seeds", help="comma-separated RL run seeds")
    rl.add_argument("--no-ml-init", action="store_true", help="start RL from a random policy")

    sub.add_parser("make-corpus", parents=[common], help="generate corpus, vocabulary and forbidden words")
    sub.add_parser("train-ml", parents=[common, jobs], help="maximum-likelihood pretraining of policy and bots")
    sub.add_parser("gen-pool", parents=[common], help="log bot answers with behaviour probabilities and rewards")
    sub.add_parser("train-rl", parents=[common, jobs, rl], help="off-policy RL training with per-epoch evaluation")
    ev = sub.add_parser("eval", parents=[common], help="score a checkpoint on the test inputs")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--run-seed", type=int)
    ev.add_argument("--epoch", type=int)
    sub.add_parser("pipeline", parents=[common, jobs, rl], help="all stages in order")
    return parser


def _overrides(args) -> dict:
    o = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        o[k.strip()] = v.strip()
    o.update({"seed": args.seed, "out": args.out})
    if hasattr(args, "variant"):
        o.update({"rl.variant": args.variant, "rl.critic": args.critic, "rl.lambda": args.lam,
                  "rl.epochs": args.epochs, "rl.seeds": args.seeds})
        if args.no_ml_init:
            o["rl.ml_init"] = "false"
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, _overrides(args))
        if args.command == "make-corpus":
            print(cmd_make_corpus(cfg))
        elif args.command == "train-ml":
            print(cmd_train_ml(cfg, args.jobs))
        elif args.command == "gen-pool":
            print(cmd_gen_pool(cfg))
        elif args.command in ("train-rl", "pipeline"):
            runs = (cmd_train_rl if args.command == "train-rl" else run_pipeline)(cfg, args.jobs)
            print(format_summary(summarize(runs)))
        elif args.command == "eval":
            rep = cmd_eval(cfg, args.checkpoint, args.run_seed, args.epoch)
            print(f"{rep['mean']:.4f} ± {rep['stderr']:.4f} (n={rep['n']})")
            print(json.dumps(rep, sort_keys=True))
    except ConfigError as exc:
        print(f"bpglab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"bpglab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
