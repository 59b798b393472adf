"""Test bootstrap: project root on sys.path and a reproducible hypothesis profile."""

from __future__ import annotations

import sys
from pathlib import Path

from hypothesis import settings


PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

# Property tests draw the same examples on every run so failures reproduce.
settings.register_profile("regime_allocator", derandomize=True, print_blob=True)
settings.load_profile("regime_allocator")
