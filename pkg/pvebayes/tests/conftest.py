import pytest
import os


def pytest_addoption(parser):
    parser.addoption("--answer_dir",
                     help="Directory where answers are stored.")
    parser.addoption("--answer_store", action="store_true",
                     help="Generate new answers, but don't test.")
    parser.addoption("--run_slow", action="store_true",
                     help="Also run the long fits and simulation studies.")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running fit or study")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run_slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run_slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture()
def answer_store(request):
    return request.config.getoption('--answer_store')


@pytest.fixture()
def answer_dir(request):
    ad = request.config.getoption('--answer_dir')
    if ad is None:
        pytest.skip("no --answer_dir given")
    ad = os.path.abspath(ad)
    if not os.path.exists(ad):
        os.makedirs(ad)
    return ad
