import numpy as np
import pytest

import gradeshi as g
from synthglyphs import write_tree

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """Recorder for acceptance pass/fail lines, echoed in the final summary."""

    def record(name: str, passed: bool, detail: str = ""):
        line = f"{name}: {'PASS' if passed else 'FAIL'}" + (f"  ({detail})" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_tree(tmp_path_factory):
    """16px tree with one class per category, 6 images each."""
    root = tmp_path_factory.mktemp("tinytree")
    manifest_path = write_tree(
        root, ["vowel", "consonant", "numeric", "compound"], 6, 16, seed=3)
    manifest = g.load_manifest(manifest_path)
    return root, manifest, manifest_path


@pytest.fixture(scope="session")
def tiny_examples(tiny_tree):
    root, manifest, _ = tiny_tree
    index = g.scan_dataset(root, manifest)
    return index, g.load_examples(index, 16)


def tiny_arch(classes=4, image=16, family="simple-cnn"):
    if family == "simple-cnn":
        return g.ArchConfig(family, image, classes, stage_widths=(8,), dense_units=16)
    if family == "mini-mobilenet":
        return g.ArchConfig(family, image, classes, stage_widths=(6, 12),
                            blocks_per_stage=1, dense_units=16)
    return g.ArchConfig(family, image, classes, stage_widths=(8,),
                        blocks_per_stage=1, dense_units=16)


@pytest.fixture
def rng():
    return np.random.default_rng(1789)
