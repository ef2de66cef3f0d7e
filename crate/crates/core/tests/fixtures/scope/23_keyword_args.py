import argparse

parser = argparse.ArgumentParser(description="tool")
parser.add_argument("--size", type=int, default=3)


def parse(args):
    opts = parser.parse_args(args)
    return opts.size
