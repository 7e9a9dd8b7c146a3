#!/usr/bin/env python3
"""
CI Hybrid Precoding CLI
Command-line entry point: simulate, assign, precode, overhead and selftest.

Environment (optionally from a .env file):
    CIHYBRID_CONFIG     default config path
    CIHYBRID_SEED       default master seed
    CIHYBRID_LOG_LEVEL  logging level (default WARNING)
"""

import argparse
import logging
import math
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from cihybrid.assignment import build_assignment_model, gain_matrix_codebook, gain_matrix_continuous
from cihybrid.channel import generate_channels, place_users
from cihybrid.errors import CiHybridError, ConfigurationError
from cihybrid.experiment import (
    DEFAULT_BUDGET_GRID,
    DEFAULT_TNR_GRID,
    SweepSpec,
    format_overhead_csv,
    overhead_table,
    power_at_ser,
    run_sweep,
)
from cihybrid.model import NetworkConfig, SymbolVector, detect_psk_array, received_nominal
from cihybrid.oracles import run_selftest
from cihybrid.schemes import (
    SchemeId,
    associate_users,
    precode_slot,
    prepare_coordinated,
    prepare_uncoordinated,
    run_uncoordinated,
)
from cihybrid.utils.channel_io import dump_channels, load_channels
from cihybrid.utils.config_loader import (
    desk_scale_config,
    describe_validation_error,
    full_scale_config,
    load_config,
)
from cihybrid.utils.lp_format import write_lp
from cihybrid.utils.reporting import format_alpha, format_estimate, format_overhead, format_power
from cihybrid.utils.rng import trial_generators


LOG_FORMAT = '%(levelname)s - %(module)s - %(message)s'

logger = logging.getLogger(__name__)


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from exc


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from exc


def _scheme_list(text: str) -> List[SchemeId]:
    try:
        return [SchemeId.parse(v) for v in text.split(',') if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _resolve_config(args: argparse.Namespace) -> NetworkConfig:
    """--full-scale, then --config / CIHYBRID_CONFIG, then the desk-scale preset."""
    if getattr(args, 'full_scale', False):
        if args.config:
            logger.info("--full-scale replaces the config from CIHYBRID_CONFIG (%s)", args.config)
        config = full_scale_config(seed=args.seed or 0)
    elif args.config:
        config = load_config(args.config)
    else:
        config = desk_scale_config(seed=args.seed or 0)
    updates = {}
    if args.seed is not None:
        updates['seed'] = args.seed
    if getattr(args, 'assignment', None):
        updates['assignment_method'] = args.assignment
    return config.replace(**updates) if updates else config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='cihybrid',
        description='Coordinated constructive-interference hybrid precoding simulator',
    )
    parser.add_argument('--log-level', default=os.getenv('CIHYBRID_LOG_LEVEL', 'WARNING'),
                        help='logging level (default: WARNING or CIHYBRID_LOG_LEVEL)')
    commands = parser.add_subparsers(dest='command', required=True)

    def common(sub: argparse.ArgumentParser, full_scale: bool = False) -> None:
        source = sub.add_mutually_exclusive_group() if full_scale else sub
        source.add_argument('--config', default=os.getenv('CIHYBRID_CONFIG'), help='JSON config path')
        if full_scale:
            source.add_argument('--full-scale', action='store_true',
                                help='full-size deployment, heuristic assignment')
        env_seed = os.getenv('CIHYBRID_SEED')
        sub.add_argument('--seed', type=int, default=int(env_seed) if env_seed else None,
                         help='master seed (default: config seed)')

    simulate = commands.add_parser('simulate', help='run a Monte Carlo SER/power sweep')
    common(simulate, full_scale=True)
    simulate.add_argument('--scheme', type=_scheme_list, default=list(SchemeId),
                          help='comma-separated scheme ids (default: all)')
    simulate.add_argument('--trials', type=int, default=200)
    simulate.add_argument('--symbols', type=int, default=50, help='symbol slots per trial')
    simulate.add_argument('--sweep', type=_float_list, default=list(DEFAULT_TNR_GRID),
                          help='CI grid: TNR values in dB')
    simulate.add_argument('--zf-sweep', type=_float_list, default=list(DEFAULT_BUDGET_GRID),
                          help='ZF grid: total budgets in dBm')
    simulate.add_argument('--out', default='results.csv', help='CSV output path')
    simulate.add_argument('--workers', type=int, default=1)
    simulate.add_argument('--ci-caps', action='store_true', help='enforce per-BS budgets in coordinated CI sweeps')
    group = simulate.add_mutually_exclusive_group()
    group.add_argument('--exact-assignment', dest='assignment', action='store_const', const='exact')
    group.add_argument('--heuristic-assignment', dest='assignment', action='store_const', const='heuristic')

    assign = commands.add_parser('assign', help='solve one RF-chain or code assignment')
    common(assign)
    assign.add_argument('--scheme', type=SchemeId.parse, default=SchemeId.CI_CONTINUOUS)
    group = assign.add_mutually_exclusive_group()
    group.add_argument('--exact-assignment', dest='assignment', action='store_const', const='exact')
    group.add_argument('--heuristic-assignment', dest='assignment', action='store_const', const='heuristic')
    assign.add_argument('--write-lp', default=None, help='also write the assignment MILP in LP text form')

    precode = commands.add_parser('precode', help='one channel draw, one symbol slot')
    common(precode)
    precode.add_argument('--scheme', type=SchemeId.parse, default=SchemeId.CI_CONTINUOUS)
    precode.add_argument('--channels', default=None, help='channel file to use instead of a fresh draw')
    precode.add_argument('--dump-channels', default=None, help='write the channel realization used')

    overhead = commands.add_parser('overhead', help='backhaul coefficient counts')
    common(overhead, full_scale=True)
    overhead.add_argument('--delta', type=_int_list, default=[1, 10, 100])
    overhead.add_argument('--out', default=None, help='optional CSV output path')

    selftest = commands.add_parser('selftest', help='run the oracle suites')
    selftest.add_argument('--seed', type=int, default=0)
    selftest.add_argument('--quick', action='store_true')
    return parser


def _draw_channels(config: NetworkConfig, seed: int):
    channel_rng, slot_rng = trial_generators(seed, 0, 0, 0)
    positions = place_users(config, config.geometry, channel_rng)
    return generate_channels(config, positions, channel_rng), slot_rng


def _check_channel_dims(channels, config: NetworkConfig, source: str) -> None:
    antennas = [block.shape[1] for block in channels.per_bs]
    if channels.num_users != config.num_users or antennas != list(config.antennas):
        raise ConfigurationError(
            f"{source} holds {channels.num_users} users over antennas {antennas}, "
            f"config expects {config.num_users} users over {list(config.antennas)}"
        )


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    try:
        spec = SweepSpec(schemes=args.scheme, grid=args.sweep, zf_grid=args.zf_sweep, trials=args.trials,
                         symbols_per_trial=args.symbols, seed=config.seed, ci_caps=args.ci_caps)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid sweep settings: {describe_validation_error(exc)}") from exc
    print(f"🚀 Simulating {len(spec.schemes)} scheme(s), {spec.trials} trials x {spec.symbols_per_trial} slots")
    estimates = run_sweep(spec, config, out=args.out, workers=args.workers)
    for estimate in estimates:
        print(format_estimate(estimate))
        if estimate.feasibility_rate == 0:
            print(f"⚠️  {estimate.scheme.value} had no feasible slot at {estimate.sweep_value:g}")
    for scheme in spec.schemes:
        matched = power_at_ser([e for e in estimates if e.scheme is scheme])
        if math.isfinite(matched):
            print(f"📊 {scheme.value} reaches SER 1e-2 at {matched:.2f} dBm")
    print(f"✅ Wrote {len(estimates)} rows to {args.out}")
    return 0


def cmd_assign(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if args.scheme.family != 'ci' or not args.scheme.is_coordinated:
        print("❌ assign accepts ci-continuous or ci-codebook")
        return 1
    channels, _ = _draw_channels(config, config.seed)
    plan = prepare_coordinated(args.scheme, config, channels)
    result = plan.assignment
    print(f"📊 {result.mode} assignment ({result.method}, {result.status}):")
    for line in format_alpha(result.alpha, result.owner):
        print(line)
    print(f"📊 tau = {result.tau:.6g}, objective = {result.objective:.6g}")
    if args.write_lp:
        if plan.codebook is None:
            gains = gain_matrix_continuous(channels, plan.chain_map)
            caps = None
        else:
            gains = gain_matrix_codebook(channels, plan.codebook)
            caps = config.rf_chains
        model = build_assignment_model(gains.q, config.fairness_weight, gains.owner, caps,
                                       one_row_per_bs_user=plan.codebook is None)
        write_lp(model, args.write_lp)
        print(f"✅ Wrote {args.write_lp}")
    print("✅ Assignment complete")
    return 0


def cmd_precode(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if args.channels:
        channels = load_channels(args.channels)
        _check_channel_dims(channels, config, args.channels)
        _, slot_rng = trial_generators(config.seed, 0, 0, 0)
    else:
        channels, slot_rng = _draw_channels(config, config.seed)
    if args.dump_channels:
        dump_channels(channels, args.dump_channels)
        print(f"✅ Wrote channels to {args.dump_channels}")
    symbols = SymbolVector.random(config.num_users, config.modulation_order, slot_rng)
    if args.scheme.is_coordinated:
        plan = prepare_coordinated(args.scheme, config, channels)
        solution = precode_slot(plan, config, channels, symbols, config.budgets)
        analog = plan.analog
    else:
        print(f"📊 association: {associate_users(channels, config).tolist()}")
        plan = prepare_uncoordinated(config, channels)
        solution = run_uncoordinated(config, channels, symbols, plan, config.budgets)
        analog = plan.analog
    for g, power in enumerate(solution.per_bs_power):
        print(f"📊 BS {g}: {format_power(float(power))}")
    print(f"📊 total: {format_power(solution.total_power)}")
    print(f"📊 min CI slack: {solution.min_slack:.4g}")
    detected = detect_psk_array(received_nominal(channels, analog, solution.digital), config.modulation_order)
    errors = int(np.sum(detected != symbols.indices)) + len(solution.erased_users)
    status = '✅' if errors == 0 else '⚠️ '
    print(f"{status} noiseless symbol errors: {errors}/{config.num_users}")
    return 0


def cmd_overhead(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    table = overhead_table(config, args.delta)
    print("📊 Backhaul coefficients per coherence block:")
    for line in format_overhead(table):
        print(line)
    if args.out:
        try:
            Path(args.out).write_text(format_overhead_csv(table), encoding='utf-8')
        except OSError as exc:
            print(f"❌ cannot write {args.out}: {exc}")
            return 1
        print(f"✅ Wrote {args.out}")
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    print(f"🧪 Running oracle suites (seed {args.seed}{', quick' if args.quick else ''})")
    results = run_selftest(seed=args.seed, quick=args.quick)
    for result in results:
        mark = '✅' if result.passed else '❌'
        print(f"{mark} {result.name}: {result.checked} checks, {len(result.failures)} failures")
        for failure in result.failures[:5]:
            print(f"    {failure}")
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    'simulate': cmd_simulate,
    'assign': cmd_assign,
    'precode': cmd_precode,
    'overhead': cmd_overhead,
    'selftest': cmd_selftest,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main execution function"""
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=str(args.log_level).upper(), format=LOG_FORMAT)
    try:
        return COMMANDS[args.command](args)
    except CiHybridError as exc:
        print(f"❌ {exc}")
        return 1
    except OSError as exc:
        print(f"❌ {exc}")
        return 1


if __name__ == '__main__':
    sys.exit(main())
