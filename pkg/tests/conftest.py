from pathlib import Path

import pytest

from nccox import build_scheme, parse_config

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="session")
def exp_normal_config():
    return parse_config((CONFIG_DIR / "exp_normal.txt").read_text())


@pytest.fixture(scope="session")
def eta5_config():
    return parse_config((CONFIG_DIR / "exp_normal_eta5.txt").read_text())


@pytest.fixture(scope="session")
def weibull_uniform_config():
    return parse_config((CONFIG_DIR / "weibull_uniform.txt").read_text())


@pytest.fixture(scope="session")
def full_cohort_config():
    return parse_config((CONFIG_DIR / "full_cohort_eta2.txt").read_text())


@pytest.fixture(scope="session")
def exp_normal_scheme(exp_normal_config):
    return build_scheme(exp_normal_config)


@pytest.fixture(scope="session")
def weibull_uniform_scheme(weibull_uniform_config):
    return build_scheme(weibull_uniform_config)
