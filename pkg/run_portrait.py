#!/usr/bin/env python3
"""
Entry point for the portrait refiner pipeline.

    python run_portrait.py generate-data --identities 200 --views 2 --res 64 --out data/train
    python run_portrait.py train --stage codec --data data/train --out runs/codec
    python run_portrait.py train --stage pretrain --data data/train --eval-data data/eval \
        --codec runs/codec/codec --out runs/pretrain
    python run_portrait.py eval --checkpoint runs/pretrain/checkpoints/step_0020000 --data data/eval

Exit codes: 0 success, 1 validation/configuration error, 2 integrity error,
3 numerical abort.
"""

import argparse
import logging
import os
import sys

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from cli.commands import COMMANDS, DEFAULT_ANGLES, DEFAULT_LEVELS, DEFAULT_R
from cli.config import RunConfig
from common.errors import PortraitError
from common.logs import setup_logging

logger = logging.getLogger("run_portrait")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--log-level', default='INFO', help='Logging level')
    common.add_argument('--out', default='run', help='Output directory')
    common.add_argument('--seed', type=int, default=None, help='Global seed')
    common.add_argument('--config', default=None, help='JSON config document')
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='Config override, dotted keys allowed (repeatable)')

    parser = argparse.ArgumentParser(description='Single-step multi-view portrait refiner')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('generate-data', parents=[common], help='Render a synthetic dataset')
    p.add_argument('--identities', type=int, default=200, help='Number of identities')
    p.add_argument('--views', type=int, default=2, help='Target views per identity')
    p.add_argument('--res', type=int, default=64, help='Image resolution')
    p.add_argument('--split', choices=['train', 'eval'], default='train')
    p.add_argument('--regime', choices=['pretrain', 'finetune'], default='pretrain')
    p.add_argument('--first-seed', type=int, default=0, help='First identity seed')
    p.add_argument('--workers', type=int, default=1, help='Render threads')

    p = sub.add_parser('train', parents=[common], help='Train one stage')
    p.add_argument('--stage', choices=['codec', 'base', 'pretrain', 'finetune', 'embedder'], required=True)
    p.add_argument('--data', default=None, help='Training dataset directory')
    p.add_argument('--eval-data', default=None, help='Held-out dataset for eval snapshots')
    p.add_argument('--mix-data', default=None, help='Secondary-regime dataset mixed in by regime_mix')
    p.add_argument('--codec', default=None, help='Codec checkpoint directory')
    p.add_argument('--init', default=None, help='Base refiner or previous stage checkpoint')
    p.add_argument('--resume', default=None, help='Checkpoint to resume from')
    p.add_argument('--steps', type=int, default=None, help='Step count for the selected stage')
    p.add_argument('--progress', action='store_true', help='Show progress bars')

    for name, help_text in (('eval', 'Full metric report'),
                            ('ablate-noise', 'Fixed-noise-level ablation'),
                            ('ablate-rotation', 'Yaw sweep ablation')):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument('--checkpoint', required=True, help='Stage checkpoint or refiner directory')
        p.add_argument('--codec', default=None, help='Codec directory (default: from checkpoint)')
        p.add_argument('--embedder', default=None, help='Identity embedder directory')
        p.add_argument('--data', default=None, help='Held-out dataset directory')
        if name == 'eval':
            p.add_argument('--r', type=float, default=DEFAULT_R, help='Inference noise level')
            p.add_argument('--trials', type=int, default=20, help='Timing trials')
        if name == 'ablate-noise':
            p.add_argument('--levels', default=DEFAULT_LEVELS, help='Comma-separated noise levels')
        if name == 'ablate-rotation':
            p.add_argument('--angles', default=DEFAULT_ANGLES, help='Comma-separated yaw angles')
            p.add_argument('--identities', type=int, default=20, help='Number of identities')

    p = sub.add_parser('render', parents=[common], help='Refine novel views of one subject')
    p.add_argument('--reference', required=True, help='Frontal reference PNG')
    p.add_argument('--yaws', required=True, help='Comma-separated target yaws')
    p.add_argument('--checkpoint', required=True, help='Stage checkpoint or refiner directory')
    p.add_argument('--codec', default=None, help='Codec directory (default: from checkpoint)')
    p.add_argument('--identity', type=int, default=None, help='Subject seed for the coarse views')
    p.add_argument('--regime', choices=['pretrain', 'finetune'], default='pretrain')
    p.add_argument('--r', type=float, default=DEFAULT_R, help='Inference noise level')
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    os.makedirs(args.out, exist_ok=True)
    setup_logging(args.log_level, log_file=os.path.join(args.out, 'run.log'))
    run = RunConfig(command=args.command, config_path=args.config, overrides=args.overrides,
                    out=args.out, seed=args.seed)

    try:
        result = COMMANDS[args.command](args, run)
    except PortraitError as e:
        logger.error(f"[{args.command}] {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code

    print(result)
    return 0


if __name__ == '__main__':
    sys.exit(main())
