"""medqr: question retrieval engine and evaluation workbench built on pooled
token-embedding representations."""

from __future__ import annotations

from pathlib import Path

__version__ = "0.1.0"

_DATA_DIR = Path(__file__).parent / "data"


def builtin_data_path(name: str) -> Path:
    """Path to a data file shipped with the package (mapping table, stop words)."""
    path = _DATA_DIR / name
    if not path.exists():
        raise FileNotFoundError(f"no packaged data file named {name!r}")
    return path
