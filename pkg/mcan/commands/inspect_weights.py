import argparse
import logging

from mcan import storage
from mcan.exceptions import ChecksumError

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("inspect-weights", help="list the entries of a weight file")
    parser.add_argument("weights", help="weight file or checkpoint")
    parser.set_defaults(handler=cmd_inspect)


def cmd_inspect(args: argparse.Namespace) -> int:
    """Entry table, format version, optimizer section and CRC status"""
    weight_file = storage.read(args.weights, verify=False)
    rows = weight_file.describe()
    width = max([len(name) for name, _, _ in rows] + [len("entry")])
    print(f"version     {weight_file.version}")
    print(f"entries     {len(rows)}")
    print(f"elements    {sum(size for _, _, size in rows):,}")
    optimizer = f"yes (step {weight_file.step})" if weight_file.has_optimizer else "no"
    print(f"optimizer   {optimizer}")
    print(f"crc         {'ok' if weight_file.crc_ok else 'MISMATCH'}")
    print()
    print(f"{'entry':<{width}}  {'shape':<18}  {'elements':>10}")
    for name, shape, size in rows:
        print(f"{name:<{width}}  {'x'.join(str(d) for d in shape):<18}  {size:>10,}")
    if not weight_file.crc_ok:
        raise ChecksumError(f"{args.weights}: CRC mismatch")
    return 0
