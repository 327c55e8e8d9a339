def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end toy training runs (deselect with -m 'not slow')")
