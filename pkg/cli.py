"""
Command-line runner for the Flow-Strata Engine

Dispatches each subcommand to its handler, prints the response body and exits
with the handler's exit code.

Run with: python cli.py --seed 7 --out out experiment --config configs/example1.json
"""

import argparse
import json
import os
import sys

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from dotenv import load_dotenv

load_dotenv()

from handlers import ci_lines, estimate, experiment, generate, train, validate_strata
from utils.config import configure_logging, get_engine_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='flow-strata',
                                     description='Stratified Monte Carlo through transport maps')
    parser.add_argument('--seed', type=int, default=None, help='master seed')
    parser.add_argument('--config', default=None, help='experiment config (JSON)')
    parser.add_argument('--out', default=None, help='output directory')
    parser.add_argument('--threads', type=int, default=None, help='worker threads')
    parser.add_argument('--log-level', default=None)
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('generate', help='sample a testbed to CSV')
    p.add_argument('--testbed', required=True)
    p.add_argument('--n', type=int, default=None)
    p.add_argument('--output', default=None)

    p = sub.add_parser('train', help='train a flow or GMM on a CSV')
    p.add_argument('--data', required=True)
    p.add_argument('--model', choices=['flow', 'gmm'], default='flow')
    p.add_argument('--k', type=int, default=4)
    p.add_argument('--layers', type=int, default=None)
    p.add_argument('--hidden', type=int, default=None)
    p.add_argument('--epochs', type=int, default=None)
    p.add_argument('--batch-size', type=int, default=None)
    p.add_argument('--learning-rate', type=float, default=None)
    p.add_argument('--optimizer', choices=['adam', 'sgd-momentum'], default=None)
    p.add_argument('--first-difference', action='store_true')
    p.add_argument('--output', default=None)

    sub.add_parser('estimate', help='one estimate per grid cell of the config')

    p = sub.add_parser('experiment', help='repeated trials with aggregated metrics')
    p.add_argument('--retrain-per-rep', action='store_true',
                   help='train a fresh model for every repetition')

    p = sub.add_parser('ci-lines', help='confidence intervals over many repetitions')
    p.add_argument('--repetitions', type=int, default=None)

    p = sub.add_parser('validate-strata', help='diagnostics for a stratification scheme')
    p.add_argument('--scheme', required=True, help='scheme JSON or a path to it')
    p.add_argument('--d', type=int, default=None)
    p.add_argument('--n-samples', type=int, default=100_000)
    p.add_argument('--output', default=None)
    return parser


def build_event(args) -> dict:
    event = {'seed': args.seed, 'out': args.out, 'threads': args.threads}
    if args.config:
        event['config_path'] = args.config
    if args.command == 'generate':
        event.update(testbed=args.testbed, output=args.output)
        if args.n is not None:
            event['n'] = args.n
    elif args.command == 'train':
        model = {'kind': args.model}
        if args.model == 'gmm':
            model['k'] = args.k
        for key in ('layers', 'hidden', 'epochs', 'batch_size', 'learning_rate', 'optimizer'):
            if getattr(args, key) is not None:
                model[key] = getattr(args, key)
        event.update(data_path=args.data, model=model, output=args.output,
                     first_difference=args.first_difference)
    elif args.command == 'experiment' and args.retrain_per_rep and args.config:
        with open(args.config, encoding='utf-8') as fh:
            event['config'] = dict(json.load(fh), retrain_per_rep=True)
    elif args.command == 'ci-lines':
        event['repetitions'] = args.repetitions
    elif args.command == 'validate-strata':
        event.update(scheme=args.scheme, d=args.d, n_samples=args.n_samples, output=args.output)
    return event


HANDLERS = {
    'generate': generate.handler,
    'train': train.handler,
    'estimate': estimate.handler,
    'experiment': experiment.handler,
    'ci-lines': ci_lines.handler,
    'validate-strata': validate_strata.handler,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or get_engine_config()['log_level'])
    response = HANDLERS[args.command](build_event(args), None)
    print(json.dumps(json.loads(response['body']), indent=2))
    return response['exitCode']


if __name__ == '__main__':
    sys.exit(main())
