#!/usr/bin/env python3
"""Print the MAC profile of every catalog graph and the decoder-block
comparison at a few widths."""

import argparse

from handkit import profiler


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--resolution", type=int, default=256)
    args = parser.parse_args()

    for name, builder in profiler.CATALOG.items():
        report = profiler.profile(builder(), args.resolution)
        print(report.to_text())

    for channels in (16, 64, 256):
        print(profiler.compare_decoders(channels, 8).to_text())


if __name__ == "__main__":
    main()
