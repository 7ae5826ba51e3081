import pytest
import logging
import warnings
from multiprocessing.util import log_to_stderr

from mvgeom._base import LOGGER


def pytest_addoption(parser):
    parser.addoption("--mvgeom-verbosity", type=int, default=logging.WARNING,
                     help="log-level: integer, DEBUG(10) - WARNING(30)")
    parser.addoption("--skip-slow", action="store_true",
                     help="skip the randomised scene sweeps.")


def pytest_configure(config):
    """Setup multiprocessing and mvgeom logging for testing"""
    level = config.getoption("--mvgeom-verbosity")
    log = log_to_stderr(level)
    log.handlers[0].setFormatter(logging.Formatter(
        '[%(levelname)s:%(processName)s:%(threadName)s] %(message)s'))
    LOGGER.setLevel(level)

    warnings.simplefilter('always')

    config.addinivalue_line("markers", "slow")
    config.addinivalue_line("markers", "parallel")


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--skip-slow"):
        return
    skip_slow = pytest.mark.skip(reason="--skip-slow option was provided")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
