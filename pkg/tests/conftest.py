import numpy as np
import pytest

from secobs.bank import ObserverBank, enumerate_subsets
from secobs.io import load_scenario
from secobs.synthesis import build_block_matrices, solve_stage1, solve_stage2

from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "secobs" / "data"


class Design:
    """Bundle + solved two-stage design, shared across tests."""

    def __init__(self, name: str, n_c: int, n_a: int):
        self.bundle = load_scenario(DATA / f"{name}.yaml")
        supers, subs, _ = enumerate_subsets(n_c, n_a)
        self.bm = build_block_matrices(self.bundle.system, supers + subs)
        self.c1, self.gains = solve_stage1(self.bm, self.bundle.synthesis)
        self.c2 = solve_stage2(self.bm, self.gains, self.bundle.T_bar, self.c1.nu, self.bundle.synthesis)
        self.bank = ObserverBank.with_gains(n_c, n_a, list(self.gains.K), list(self.gains.L))
        self.n_c = n_c
        self.n_a = n_a


@pytest.fixture(scope="session")
def reduced():
    return Design("grid3", 3, 1)


@pytest.fixture(scope="session")
def full_bank():
    return Design("grid5", 5, 2)


@pytest.fixture(scope="session")
def grid5_bundle():
    return load_scenario(DATA / "grid5.yaml")


@pytest.fixture(scope="session")
def grid3_bundle():
    return load_scenario(DATA / "grid3.yaml")
