"""Ensures the tests directory itself is importable (shared oracle helpers)."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
