"""
Command-line entry point for the pulse accumulator toolkit.

Usage:
    python pulse_cli.py [--config FILE] [--seed N] [--out DIR] [--log-level LEVEL] <command> ...

Commands:
    verify      Run the property suite
    bench       scaling | roofline | memory
    sweep       MSE diagnostic sweep of a toy teacher
    convert     Progressive attention-to-LPA replacement
    infer       Soft or hard-gate inference on a saved checkpoint

Exit codes: 0 ok, 1 property or runtime failure, 2 usage error or missing input.
"""
import argparse
import logging
import os
import sys
from functools import partial
from typing import List, Optional

from dotenv import load_dotenv

# Load environment variables before the configuration reads them
load_dotenv()

import numpy as np
import pandas as pd
import torch

from config import BENCH_CONFIG, CLI_CONFIG, HARDGATE_CONFIG, PERF_CONFIG
from exceptions import CheckpointNotFoundError, ConfigError, PulseError
from models.conversion import ORDER_COLUMNS, SWEEP_COLUMNS, TRACE_COLUMNS
from models.encoder import ToyEncoder
from models.hardware import COST_COLUMNS
from models.run_config import RunConfig
from repositories.parameter_repository import ParameterRepository
from repositories.profile_repository import ProfileRepository
from repositories.program_repository import ProgramRepository
from repositories.report_repository import ReportRepository
from services import hardgate, perfmodel, plotting, reference, training
from services.benchmark import SCALING_COLUMNS, BenchmarkService, scaling_summary
from services.conversion import ORDERS, ConversionService, resolve_order
from services.synthetic_data import SyntheticDataset, make_dataset
from services.verification import PropertySuite, summarize

logger = logging.getLogger("pulse_cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pulse_cli.py", description="Learnable pulse accumulator toolkit")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="Seed (falls back to the config file, then PULSE_SEED, then 0)")
    parser.add_argument("--out", help="Artifact directory")
    parser.add_argument("--log-level", default=CLI_CONFIG["LOG_LEVEL"], help="Logging level")
    commands = parser.add_subparsers(dest="command", required=True)

    verify = commands.add_parser("verify", help="Run the property suite")
    verify.add_argument("--self-test-fault", action="store_true", help="Inject a fault the suite must detect")
    verify.add_argument("--trial-scale", type=float, default=1.0, help="Multiply every property's trial count")
    verify.add_argument("--only", type=lambda s: s.split(","), help="Comma-separated property names")

    bench = commands.add_parser("bench", help="Benchmarks and cost-model tables")
    kinds = bench.add_subparsers(dest="kind", required=True)
    scaling = kinds.add_parser("scaling", help="Measured forward time against sequence length")
    scaling.add_argument("--sizes", type=_int_list, default=list(BENCH_CONFIG["SIZES"]))
    scaling.add_argument("--d", type=int, default=BENCH_CONFIG["DIM"])
    scaling.add_argument("--heads", type=int, default=BENCH_CONFIG["HEADS"])
    scaling.add_argument("--warmup", type=int, default=BENCH_CONFIG["WARMUP"])
    scaling.add_argument("--iterations", type=int, default=BENCH_CONFIG["ITERATIONS"])
    scaling.add_argument("--plot", action="store_true", help="Write a log-scale SVG chart")
    roofline = kinds.add_parser("roofline", help="Roofline component table and calibration report")
    roofline.add_argument("--profile", default=PERF_CONFIG["DEFAULT_PROFILE"], help="Profile name or JSON file")
    roofline.add_argument("--pulses", type=_int_list, default=[12, 36])
    roofline.add_argument("--length", type=int, default=6000)
    roofline.add_argument("--dim", type=int, default=768)
    roofline.add_argument("--heads", type=int, default=12)
    memory = kinds.add_parser("memory", help="Attention versus gate memory by audio duration")
    memory.add_argument("--durations", type=_float_list, default=list(BENCH_CONFIG["DURATIONS"]))
    memory.add_argument("--pulses", type=int, default=12)

    sweep = commands.add_parser("sweep", help="MSE diagnostic sweep")
    sweep.add_argument("--teacher", help="Teacher checkpoint (trained from scratch when omitted)")

    convert = commands.add_parser("convert", help="Progressive replacement")
    convert.add_argument("--teacher", help="Teacher checkpoint (trained from scratch when omitted)")
    convert.add_argument("--order", choices=ORDERS, default="mse")
    convert.add_argument("--budget", type=float, default=None, help="Stop once the validation metric exceeds this")
    convert.add_argument("--compare-orders", action="store_true", help="Paired-seed mse versus reverse comparison")
    convert.add_argument("--seeds", type=int, default=5, help="Seeds for --compare-orders")

    infer = commands.add_parser("infer", help="Inference on a saved checkpoint")
    infer.add_argument("--checkpoint", required=True)
    infer.add_argument("--input", required=True, help=".npy array (n, d_in) or (B, n, d_in)")
    infer.add_argument("--hard", action="store_true", help="Use hard gates")
    infer.add_argument("--strict", action="store_true", help="Warn about gate logits inside the margin")
    infer.add_argument("--compare", action="store_true", help="Report the max deviation between soft and hard paths")
    infer.add_argument("--dump-programs", action="store_true", help="Write the compiled segment programs")
    infer.add_argument("--strategy", choices=hardgate.STRATEGIES, default="auto")
    infer.add_argument("--rounding", choices=hardgate.ROUNDING_MODES, default=HARDGATE_CONFIG["ENDPOINT_ROUNDING"])
    return parser


def data_factory(config: RunConfig):
    def make(seed: int, split: str) -> SyntheticDataset:
        batches = config.data.val_batches if split == "val" else config.data.train_batches
        return make_dataset(seed, split, batches=batches, batch_size=config.data.batch_size,
                            seq_len=config.data.seq_len, input_dim=config.model.input_dim)
    return make


def conversion_settings(config: RunConfig) -> dict:
    return {**config.schedule.training_settings(), "PULSE_SPLIT": config.model.pulse_split}


def build_teacher(config: RunConfig, seed: int) -> ToyEncoder:
    """Seeded attention encoder pre-trained on the denoising task."""
    generator = torch.Generator().manual_seed(seed)
    model = config.model
    encoder = reference.init_encoder(model.dim, model.input_dim, model.layers, model.heads, generator=generator)
    return training.pretrain_teacher(encoder, data_factory(config)(seed, "train"),
                                     steps=config.schedule.teacher_steps)


def load_or_build_teacher(config: RunConfig, params: ParameterRepository, path: Optional[str]) -> ToyEncoder:
    if path:
        return params.load(path)
    logger.info(f"Training a {config.model.layers}-layer teacher (seed {config.seed})")
    teacher = build_teacher(config, config.seed)
    params.create("teacher", teacher)
    return teacher


def cmd_verify(args: argparse.Namespace, config: RunConfig) -> int:
    suite = PropertySuite(seed=config.seed, inject_fault=args.self_test_fault, trial_scale=args.trial_scale)
    results = suite.run(args.only)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{status}  {r.module}.{r.name} ({r.trials} trials)"
        if not r.passed:
            line += f"  seed={r.seed}: {r.detail}"
        print(line)
    passed, failed = summarize(results)
    print(f"{passed} passed, {failed} failed, {len(results)} properties")
    frame = pd.DataFrame([vars(r) for r in results], columns=["name", "module", "passed", "trials", "seed", "detail"])
    ReportRepository(config.output_dir).create("verify_report", frame)
    return EXIT_OK if failed == 0 else EXIT_FAILURE


def cmd_bench(args: argparse.Namespace, config: RunConfig) -> int:
    reports = ReportRepository(config.output_dir)
    if args.kind == "scaling":
        service = BenchmarkService(warmup=args.warmup, iterations=args.iterations)
        frame = service.scaling(args.sizes, args.d, args.heads, seed=config.seed)
        reports.create("scaling", frame, SCALING_COLUMNS)
        print(frame.to_string(index=False))
        summary = scaling_summary(frame)
        print(f"log-log slope: attention {summary['attention_slope']:.3f}, LPA {summary['lpa_slope']:.3f}; "
              f"crossover n* = {summary['crossover_n']}")
        if args.plot:
            path = plotting.write_figure(plotting.scaling_figure(frame), os.path.join(config.output_dir, "scaling.svg"))
            logger.info(f"Wrote {path}")
    elif args.kind == "roofline":
        profile = ProfileRepository(config.output_dir).load(args.profile)
        table = perfmodel.roofline_table(args.length, args.dim, args.heads, args.pulses, profile)
        reports.create("roofline", table, COST_COLUMNS)
        calibration = perfmodel.calibration_report(profile, args.length, args.dim, args.heads)
        reports.create("calibration", calibration, perfmodel.CALIBRATION_COLUMNS)
        totals = perfmodel.totals_table(args.length, args.dim, args.heads, args.pulses, profile)
        reports.create("totals", totals, perfmodel.TOTAL_COLUMNS)
        print(table.to_string(index=False))
        print(calibration.to_string(index=False))
        print(totals.to_string(index=False))
    else:
        table = perfmodel.memory_table(args.durations, pulses=args.pulses)
        reports.create("memory", table, perfmodel.MEMORY_COLUMNS)
        print(table.to_string(index=False))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, config: RunConfig) -> int:
    params = ParameterRepository(config.output_dir)
    teacher = load_or_build_teacher(config, params, args.teacher)
    service = ConversionService(config.seed, conversion_settings(config))
    report = service.mse_sweep(teacher, data_factory(config)(config.seed, "sweep"), config.sweep)
    frame = report.to_frame()
    ReportRepository(config.output_dir).create("sweep_report", frame, SWEEP_COLUMNS)
    print(frame.to_string(index=False))
    print(f"Replacement order (easiest first): {report.order}")
    return EXIT_OK


def cmd_convert(args: argparse.Namespace, config: RunConfig) -> int:
    params = ParameterRepository(config.output_dir)
    reports = ReportRepository(config.output_dir)
    make_data = data_factory(config)
    service = ConversionService(config.seed, conversion_settings(config))

    if args.compare_orders:
        seeds = list(range(config.seed, config.seed + args.seeds))
        frame = service.compare_orders(partial(build_teacher, config), seeds, ("mse", "reverse"),
                                       config.sweep, make_data)
        reports.create("order_comparison", frame, ORDER_COLUMNS)
        medians = frame.groupby("order")["final_loss"].median()
        print(frame.to_string(index=False))
        print("median final loss: " + ", ".join(f"{k} {v:.6f}" for k, v in medians.items()))
        verdict = "beats" if medians["mse"] < medians["reverse"] else "does not beat"
        print(f"mse order {verdict} reverse order on median final loss")
        return EXIT_OK

    teacher = load_or_build_teacher(config, params, args.teacher)
    report = None
    if args.order != "natural":
        report = service.mse_sweep(teacher, make_data(config.seed, "sweep"), config.sweep)
        reports.create("sweep_report", report.to_frame(), SWEEP_COLUMNS)
    order = resolve_order(args.order, report, teacher.num_layers)
    result = service.progressive_replace(teacher, order, make_data(config.seed, "train"),
                                         make_data(config.seed, "val"), budget=args.budget)
    reports.create("stage_trace", result.trace.to_frame(), TRACE_COLUMNS)
    params.create("converted", result.encoder)
    print(f"Replaced layers {result.replaced} (order {args.order}); final metric {result.final_metric:.6f}"
          + (" [stopped on budget]" if result.stopped_on_budget else ""))
    return EXIT_OK


def cmd_infer(args: argparse.Namespace, config: RunConfig) -> int:
    encoder = ParameterRepository(config.output_dir).load(args.checkpoint)
    if not os.path.exists(args.input):
        raise CheckpointNotFoundError(args.input)
    tokens = torch.from_numpy(np.load(args.input)).to(torch.float32)

    soft = hard = None
    if not args.hard or args.compare:
        with torch.no_grad():
            soft = reference.encoder_forward(tokens, encoder).hidden
    if args.hard or args.compare:
        margin = HARDGATE_CONFIG["MARGIN"] if args.strict else None
        result = hardgate.hard_encoder_forward(tokens, encoder, args.strategy, args.rounding, margin=margin)
        hard = result.hidden
        for layer, violations in result.violations.items():
            if violations:
                shown = ", ".join(f"(head {v.head}, pulse {v.pulse}, t {v.t}, logit {v.logit:+.3g})"
                                  for v in violations[:10])
                logger.warning(f"Layer {layer}: {len(violations)} gate logits inside margin "
                               f"{HARDGATE_CONFIG['MARGIN']}: {shown}")
        if args.dump_programs:
            repo = ProgramRepository(config.output_dir)
            for layer, programs in result.programs.items():
                logger.info(f"Wrote {repo.create(f'programs_layer{layer}', programs)}")

    output = hard if args.hard else soft
    os.makedirs(config.output_dir, exist_ok=True)
    path = os.path.join(config.output_dir, "infer_output.npy")
    np.save(path, output.numpy())
    print(f"Output {tuple(output.shape)} written to {path}")
    if args.compare:
        print(f"max abs deviation soft vs hard: {float((soft - hard).abs().max()):.3e}")
    return EXIT_OK


COMMANDS = {
    "verify": cmd_verify,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
    "convert": cmd_convert,
    "infer": cmd_infer,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format=CLI_CONFIG["LOG_FORMAT"])
    try:
        config = RunConfig.load(args.config, seed=args.seed, output_dir=args.out)
        return COMMANDS[args.command](args, config)
    except (CheckpointNotFoundError, ConfigError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except PulseError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
