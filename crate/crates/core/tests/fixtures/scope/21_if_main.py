import sys


def main(argv):
    return len(argv)


if __name__ == "__main__":
    code = main(sys.argv)
    sys.exit(code)
