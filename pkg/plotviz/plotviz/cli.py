"""plotviz command line: losses / embeddings / grid subcommands."""

from __future__ import annotations

import argparse
import sys

from .plots import plot_embeddings, plot_grid, plot_losses


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plotviz", description="Render run artifacts to PNG")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("losses", help="loss curves from losses.csv")
    p.add_argument("csv")
    p.add_argument("--out", default="loss.png")

    p = sub.add_parser("embeddings", help="labeled 2-D scatter from embeddings.csv")
    p.add_argument("csv")
    p.add_argument("--out", default="scatter.png")

    p = sub.add_parser("grid", help="image grid from PGM directories")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--out", default="grid.png")

    args = parser.parse_args(argv)
    try:
        if args.command == "losses":
            plot_losses(args.csv, args.out)
        elif args.command == "embeddings":
            plot_embeddings(args.csv, args.out)
        else:
            plot_grid(args.dirs, args.out)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
