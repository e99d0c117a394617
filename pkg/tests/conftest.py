import numpy as np
import pytest

from bifold.encoders import Vocabulary
from bifold.foldworld import WorldConfig, generate_dataset
from bifold.fusion import ContextConfig
from bifold.model import ArchConfig, init_model

TINY_WORLD = WorldConfig(image_size=16, sizes=(8, 12))
TINY_ARCH = ArchConfig(image_size=16, patch=4, d_model=16, heads=2, text_blocks=1, image_blocks=1,
                       fusion_blocks=1, mlp_ratio=2, lora_rank=2, lora_alpha=4.0)


@pytest.fixture(scope="session")
def tiny_data():
    return generate_dataset(10, 0, TINY_WORLD)


def make_tiny_model(data, mode="keyframes", H=2, seed=0, arch=TINY_ARCH):
    return init_model(arch, ContextConfig.for_mode(mode, H), Vocabulary(data.vocabulary), seed)


@pytest.fixture
def tiny_model(tiny_data):
    return make_tiny_model(tiny_data)


# -- acceptance reporting -------------------------------------------------------
ACCEPTANCE_LINES: list[str] = []


def report(number: int, name: str, ok: bool, detail: str) -> None:
    """Record one acceptance verdict; the lines are repeated in the terminal summary."""
    line = f"ACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
