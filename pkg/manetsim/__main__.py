"""Entry point for running as a module: python -m manetsim"""

from .cli import main

if __name__ == "__main__":
    exit(main())
