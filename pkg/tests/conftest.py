from __future__ import annotations

import numpy as np
import pytest

from dialseg.core import BoundarySet, Codebook, Dialogue, Move, RaterLabels, Segmentation, Utterance


def make_codebook(moves=("A", "B"), none=True) -> Codebook:
    return Codebook("test", tuple(Move(m, f"definition of {m}", (f"example {m}",)) for m in moves), none)


def make_dialogue(T: int, sid: str = "d0") -> Dialogue:
    return Dialogue(sid, tuple(Utterance(f"u{i}", i, "T" if i % 2 == 0 else "S", f"text {i}") for i in range(T)))


def make_labels(seq, rater="human") -> RaterLabels:
    """``seq`` is a list of move names with None for unlabeled."""
    return RaterLabels(rater, {i: m for i, m in enumerate(seq) if m is not None})


def make_seg(bounds, T, sid="d0", method="test") -> Segmentation:
    return Segmentation(sid, BoundarySet(tuple(bounds), T), method, "0" * 16)


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture
def codebook():
    return make_codebook()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one (criterion, verdict line) per acceptance test, echoed in the terminal summary
ACCEPTANCE: list[tuple[int, str]] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
