import sys

from evotune_shim import serve


def main() -> None:
    sys.exit(serve())


if __name__ == "__main__":
    main()
