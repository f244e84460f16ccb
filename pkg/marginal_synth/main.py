import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import ValidationError

from marginal_synth.config import settings
from marginal_synth.domain import load_csv, load_domain
from marginal_synth.engineering import indif_matrix
from marginal_synth.evaluation import evaluate
from marginal_synth.exceptions import MarginalSynthError
from marginal_synth.models import STRATEGIES, GiniOptions, MarginalArchive, PrivacyParams, RunConfig
from marginal_synth.pipeline import read_text, run_synthesis, write_text
from marginal_synth.privacy import plan_noise

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_IO = 2


def _frame_to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n")


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge the optional JSON run-config file with command-line flags; flags win."""
    document: Dict[str, Any] = {}
    if args.run_config:
        try:
            document = json.loads(read_text(args.run_config))
        except json.JSONDecodeError as e:
            raise MarginalSynthError(f"malformed run config '{args.run_config}': {e}") from e

    for key in ("data", "domain", "config", "out", "epsilon", "delta", "neighboring", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            document[key] = value
    if getattr(args, "iterations", None) is not None:
        document.setdefault("synthesis", {})["iterations"] = args.iterations
    if getattr(args, "trials", None) is not None:
        document.setdefault("evaluation", {})["trials"] = args.trials
    return RunConfig.model_validate(document)


def cmd_synth(args: argparse.Namespace) -> int:
    config = build_run_config(args)
    outputs = run_synthesis(config)
    manifest = outputs.manifest
    print(
        f"records={manifest.n_output} strategy={manifest.plan.strategy} "
        f"std={manifest.plan.per_marginal_std:.6g} k={manifest.plan.k} out={config.out}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = build_run_config(args)
    if not config.data or not config.domain or not args.synth:
        raise MarginalSynthError("eval needs --data, --synth and --domain")

    domain = load_domain(read_text(config.domain))
    orig = load_csv(read_text(config.data), domain)
    synth = load_csv(read_text(args.synth), domain)

    options = config.evaluation
    if args.city_attr or args.sex_attr or args.income_attr:
        if not (args.city_attr and args.sex_attr and args.income_attr):
            raise MarginalSynthError("--city-attr, --sex-attr and --income-attr go together")
        options = options.model_copy(update={
            "gini": GiniOptions(city_attr=args.city_attr, sex_attr=args.sex_attr, income_attr=args.income_attr)
        })

    report = evaluate(orig, synth, options)
    text = json.dumps(report.model_dump(), indent=2, sort_keys=True) + "\n"
    if args.out:
        write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def noise_plan_table(params: PrivacyParams, k_max: int) -> pd.DataFrame:
    """Per-marginal std of every strategy for k = 1..k_max, with the chosen one."""
    rows = []
    for k in range(1, k_max + 1):
        plan = plan_noise(params, k)
        row = {"k": k}
        row.update({f"std_{strategy}": plan.stds[strategy] for strategy in STRATEGIES})
        row["chosen"] = plan.strategy
        rows.append(row)
    return pd.DataFrame(rows, columns=["k"] + [f"std_{s}" for s in STRATEGIES] + ["chosen"])


def cmd_noise_plan(args: argparse.Namespace) -> int:
    params = PrivacyParams(
        epsilon=args.epsilon if args.epsilon is not None else settings.epsilon,
        delta=args.delta if args.delta is not None else settings.delta,
        neighboring=args.neighboring or settings.neighboring,
    )
    if args.k_max < 1:
        raise MarginalSynthError(f"--k-max must be at least 1, got {args.k_max}")
    sys.stdout.write(_frame_to_csv(noise_plan_table(params, args.k_max)))
    return EXIT_OK


def cmd_indif(args: argparse.Namespace) -> int:
    if not args.data or not args.domain:
        raise MarginalSynthError("indif needs --data and --domain")
    domain = load_domain(read_text(args.domain))
    dataset = load_csv(read_text(args.data), domain)
    frame = pd.DataFrame(
        [(domain.names[s.a], domain.names[s.b], s.value) for s in indif_matrix(dataset)],
        columns=["attr_a", "attr_b", "indif"],
    )
    sys.stdout.write(_frame_to_csv(frame))
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    try:
        archive = MarginalArchive.model_validate_json(read_text(args.archive))
    except ValidationError as e:
        raise MarginalSynthError(f"malformed marginal archive: {e}") from e

    print(f"layout={archive.layout} marginals={len(archive.marginals)}")
    for record in archive.marginals:
        counts = record.counts or [0.0]
        print(
            f"schema={'+'.join(record.schema_)} sizes={'x'.join(str(s) for s in record.sizes)} "
            f"total={sum(record.counts):.6g} noise_std={record.noise_std} "
            f"min={min(counts):.6g} max={max(counts):.6g}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marginal-synth",
        description="Differentially private synthetic data from noisy marginal tables",
    )
    subcommands = parser.add_subparsers(dest="command", required=True)

    def add_privacy_flags(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--epsilon", type=float)
        sub.add_argument("--delta", type=float)
        sub.add_argument("--neighboring", choices=["bounded", "unbounded"])

    def add_run_flags(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--data", help="original CSV")
        sub.add_argument("--domain", help="domain spec JSON")
        sub.add_argument("--run-config", help="JSON file mirroring RunConfig; flags override it")
        sub.add_argument("--seed", type=int)
        sub.add_argument("--out")

    synth = subcommands.add_parser("synth", help="run the full synthesis pipeline")
    add_run_flags(synth)
    add_privacy_flags(synth)
    synth.add_argument("--config", help="marginal config JSON")
    synth.add_argument("--iterations", type=int)
    synth.set_defaults(handler=cmd_synth)

    evaluate_cmd = subcommands.add_parser("eval", help="score a synthetic CSV against the original")
    add_run_flags(evaluate_cmd)
    evaluate_cmd.add_argument("--synth", help="synthetic CSV")
    evaluate_cmd.add_argument("--trials", type=int)
    evaluate_cmd.add_argument("--city-attr")
    evaluate_cmd.add_argument("--sex-attr")
    evaluate_cmd.add_argument("--income-attr")
    evaluate_cmd.set_defaults(handler=cmd_eval)

    noise = subcommands.add_parser("noise-plan", help="compare composition strategies for k = 1..k_max")
    add_privacy_flags(noise)
    noise.add_argument("--k-max", type=int, default=100)
    noise.set_defaults(handler=cmd_noise_plan)

    indif = subcommands.add_parser("indif", help="rank attribute pairs by independence gap")
    indif.add_argument("--data")
    indif.add_argument("--domain")
    indif.set_defaults(handler=cmd_indif)

    inspect = subcommands.add_parser("inspect", help="summarize a noisy-marginal archive")
    inspect.add_argument("archive")
    inspect.set_defaults(handler=cmd_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=settings.log_level)
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except (MarginalSynthError, ValidationError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
