import logging

import pytest


@pytest.fixture(autouse=True)
def _quiet_aiohttp_logs():
    logging.getLogger("aiohttp.access").setLevel(logging.WARNING)
