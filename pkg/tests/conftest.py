import numpy as np
import pytest

from cslr.corpus import SynthConfig, generate_synthetic, load_manifest
from cslr.model import ModelConfig

TINY_SYNTH = SynthConfig(vocab_size=4, sentence_len_min=1, sentence_len_max=2, frames_per_gloss_min=4,
                         frames_per_gloss_max=5, frame_height=12, frame_width=12, train_count=6, dev_count=2,
                         test_count=2, seed=11)
TINY_MODEL = ModelConfig(input_size=10, cnn_channels=(4, 6), lstm_hidden=4)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """A 10-sentence synthetic corpus shared by the trainer and CLI tests."""
    out = tmp_path_factory.mktemp("tiny")
    manifest, _ = generate_synthetic(TINY_SYNTH, out)
    return manifest, load_manifest(manifest)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
