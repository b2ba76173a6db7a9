import pytest

from saddlelab.harness import OUTPUT_DIR_ENV


@pytest.fixture(autouse=True)
def _isolate_output_dir_env(monkeypatch):
    # the env override must never leak between tests
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
