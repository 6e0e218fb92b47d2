# Make sure the doctests in the docs can import the module
import sys
sys.path.insert(0, '.')
try:
    from packaging.version import parse as LooseVersion
except ImportError:
    from distutils.version import LooseVersion

import pytest
from hypothesis import settings

# Make sure a new enough version of NumPy is installed for the tests
import numpy
if LooseVersion(numpy.__version__) < LooseVersion('1.22'):
    raise RuntimeError("NumPy 1.22 or greater is required to run the mbcnet tests")

# Show the dependency versions in the pytest header
def pytest_report_header(config):
    import scipy
    import yaml
    import joblib
    return (f"project deps: numpy-{numpy.__version__}, scipy-{scipy.__version__}, "
            f"pyyaml-{yaml.__version__}, joblib-{joblib.__version__}")

# Add a --hypothesis-max-examples flag to pytest. See
# https://github.com/HypothesisWorks/hypothesis/issues/2434#issuecomment-630309150

def pytest_addoption(parser):
    # Add an option to change the Hypothesis max_examples setting.
    parser.addoption(
        "--hypothesis-max-examples",
        "--max-examples",
        action="store",
        default=None,
        help="set the Hypothesis max_examples setting",
    )

    # Add an option to disable the Hypothesis deadline
    parser.addoption(
        "--hypothesis-disable-deadline",
        "--disable-deadline",
        action="store_true",
        help="disable the Hypothesis deadline",
    )

    # The desk-scale training experiments take minutes
    parser.addoption(
        "--run-slow",
        action="store_true",
        help="run the slow desk-scale training tests",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training test, needs --run-slow")

    # Set Hypothesis max_examples.
    hypothesis_max_examples = config.getoption("--hypothesis-max-examples")
    disable_deadline = config.getoption('--hypothesis-disable-deadline')
    profile_settings = {}
    if hypothesis_max_examples is not None:
        profile_settings['max_examples'] = int(hypothesis_max_examples)
    if disable_deadline:
        profile_settings['deadline'] = None
    if profile_settings:
        import hypothesis

        hypothesis.settings.register_profile(
            "mbcnet-hypothesis-overridden", **profile_settings,
        )

        hypothesis.settings.load_profile("mbcnet-hypothesis-overridden")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


settings.register_profile('mbcnet_hypothesis_profile', deadline=800)
settings.load_profile('mbcnet_hypothesis_profile')
