"""Entry point for running as a module: python -m fre_seg"""

from fre_seg.cli import main

if __name__ == "__main__":
    main()
