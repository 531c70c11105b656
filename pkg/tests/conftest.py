import json

import pytest
from hypothesis import settings

from medqr import builtin_data_path
from medqr.textnorm import load_mapping_table

# property tests should not flake on machine load
settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def fa_table():
    return load_mapping_table(builtin_data_path("mapping_fa.tsv"))


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(name, rows):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as handle:
            for row in rows:
                handle.write(json.dumps(row, ensure_ascii=False) + "\n")
        return path

    return _write
