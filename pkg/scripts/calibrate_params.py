"""Parameter counts over a grid of widths D and depths M.

Used to pick the default width: the row closest to the target budget is marked.
"""

import argparse

from msecg.model import ModelConfig, count_params


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--target", type=float, default=1.91e6)
    ap.add_argument("--depths", default="4,5,6")
    ap.add_argument("--widths", default="128,144,152,160,168,176,192")
    args = ap.parse_args()

    depths = [int(m) for m in args.depths.split(",")]
    widths = [int(d) for d in args.widths.split(",")]
    grid = {(D, M): count_params(ModelConfig(D=D, M=M)) for D in widths for M in depths}
    best = min(grid, key=lambda k: abs(grid[k] - args.target))
    print(f"{'D':>5} " + " ".join(f"{'M=' + str(m):>12}" for m in depths))
    for D in widths:
        cells = []
        for M in depths:
            mark = "*" if (D, M) == best else " "
            cells.append(f"{grid[D, M]:>11,}{mark}")
        print(f"{D:>5} " + " ".join(cells))
    D, M = best
    deconv = count_params(ModelConfig(D=D, M=M, use_pixel_shuffle=False, use_deconv=True))
    print(f"closest to {args.target:,.0f}: D={D} M={M} ({grid[best]:,}); deconv arm {deconv:,}")


if __name__ == "__main__":
    main()
