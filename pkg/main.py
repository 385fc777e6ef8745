"""
AugRL Bench - Main entry point
Usage: python main.py {train,verify,preview,stats} ...
"""

import sys
from pathlib import Path

# Setup path
sys.path.insert(0, str(Path(__file__).parent))

from cli.commands import main


if __name__ == "__main__":
    sys.exit(main())
