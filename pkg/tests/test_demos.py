import runpy
import sys
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parents[1] / "demos"


@pytest.mark.parametrize("script, argv", [
    ("01_features_and_tokens.py", []),
    ("03_causality_and_lookahead.py", []),
    ("04_adapt_and_probe.py", ["3"]),
])
def test_demo_runs(script, argv, monkeypatch, capsys):
    monkeypatch.setattr(sys, "argv", [script, *argv])
    runpy.run_path(str(DEMOS / script), run_name="__main__")
    assert capsys.readouterr().out.strip()
