import sys

from bftdsn.cli.interface import run_cli


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
