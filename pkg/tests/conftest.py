"""Shared fixtures. The expensive training runs are session-scoped so the
acceptance file and the unit files reuse one copy of each."""

import numpy as np
import pytest

from nestrq.encoder import EncoderConfig
from nestrq.features import SyntheticCorpusConfig, generate_corpus
from nestrq.quantizer import init_quantizer
from nestrq.training import TrainConfig, init_train_state, pretrain

DESK_STEPS = 2000


@pytest.fixture(scope="session")
def desk_corpus():
    """The reference corpus: seed 5, 64 utterances of 2-4 s, 8 hidden states."""
    return generate_corpus(SyntheticCorpusConfig(seed=5))


@pytest.fixture(scope="session")
def desk_features(desk_corpus):
    return [u.features for u in desk_corpus]


@pytest.fixture(scope="session")
def desk_labels(desk_corpus):
    return [u.labels for u in desk_corpus]


@pytest.fixture(scope="session")
def desk_quantizer(desk_features):
    return init_quantizer(0, desk_features)


@pytest.fixture(scope="session")
def desk_run(desk_features, desk_quantizer):
    """NEST-RQ, 4-block causal encoder, 2k steps; returns (init_state, trained_state, records)."""
    cfg = TrainConfig(steps=DESK_STEPS, seed=0, log_every=100)
    enc = EncoderConfig()
    init = init_train_state(cfg, enc, desk_quantizer)
    state, records = pretrain(cfg, desk_features, desk_quantizer, enc)
    return init, state, records


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(SyntheticCorpusConfig(num_utterances=12, seed=5))


@pytest.fixture(scope="session")
def small_quantizer(small_corpus):
    return init_quantizer(0, [u.features for u in small_corpus], vocab_size=64,
                          min_standardizer_rows=100)


@pytest.fixture(scope="session")
def small_encoder_cfg():
    return EncoderConfig(num_blocks=2, model_dim=32, num_heads=4)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# --- acceptance summary -------------------------------------------------------

_CRITERIA = {
    "A1": "gradient suite",
    "A2": "causality suite",
    "A3": "quantizer suite",
    "A4": "objective equivalences",
    "A5": "learning sanity",
    "A6": "adaptation suite",
    "A7": "reproducibility",
}
_outcomes: dict[str, list[bool]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_a" not in report.nodeid:
        return
    if report.when == "call" or report.failed or report.skipped:
        name = report.nodeid.split("::test_", 1)[1]
        key = "A" + name[1]
        _outcomes.setdefault(key, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance")
    for key, title in _CRITERIA.items():
        runs = _outcomes.get(key)
        if runs is None:
            continue
        verdict = "PASS" if all(runs) else "FAIL"
        terminalreporter.write_line(f"{key} {title}: {verdict} ({sum(runs)}/{len(runs)} checks)")
