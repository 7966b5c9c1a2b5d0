"""Command line front end: render histories and domain snapshots to PNG."""

import argparse
import sys

from .errors import FormatError
from .plots import plot_domain, plot_history


def _cmd_history(args) -> int:
    plot_history(args.csv, args.png)
    return 0


def _cmd_domain(args) -> int:
    plot_domain(args.vtk, args.png)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="postproc",
        description="Plot artifacts written by the lsopt optimizer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    history = sub.add_parser("plot-history", help="convergence curves from a history CSV")
    history.add_argument("csv", help="history.csv written by a run")
    history.add_argument("png", help="output image path")
    history.set_defaults(handler=_cmd_history)

    domain = sub.add_parser("plot-domain", help="filled material region from a VTK snapshot")
    domain.add_argument("vtk", help="snapshot with a 'phi' scalar field")
    domain.add_argument("png", help="output image path")
    domain.set_defaults(handler=_cmd_domain)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
