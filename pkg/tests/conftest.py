import numpy as np
import pytest

from seq4 import kernels


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run the test once per kernel backend, restoring the default afterwards."""
    prev = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _write_pairs(path, pairs):
    from seq4.corpus import detokenize_nlmaps
    path.write_text("".join(f"{' '.join(x)}\t{detokenize_nlmaps(y)}\n" for x, y in pairs),
                    encoding="utf-8")
    return str(path)


@pytest.fixture
def toy_files(tmp_path):
    """Factory writing toy train/test/unpaired files and a small config."""
    from seq4.toy import toy_pairs

    def make(n_train=20, n_test=8, n_unpaired=0, config="", seed=0):
        files = {
            "train": _write_pairs(tmp_path / "train.tsv", toy_pairs(n_train, 100 + seed)),
            "test": _write_pairs(tmp_path / "test.tsv", toy_pairs(n_test, 200 + seed)),
            "config": str(tmp_path / "run.cfg"),
        }
        (tmp_path / "run.cfg").write_text(
            "hidden_size = 8\nembedding_size = 4\nattention_size = 4\nepochs = 1\n"
            "init_scale = 0.2\n" + config, encoding="utf-8")
        if n_unpaired:
            from seq4.corpus import detokenize_nlmaps
            path = tmp_path / "unpaired.txt"
            path.write_text("".join(detokenize_nlmaps(y) + "\n"
                                    for _, y in toy_pairs(n_unpaired, 300 + seed)),
                            encoding="utf-8")
            files["unpaired"] = str(path)
        return files

    return make


def pytest_terminal_summary(terminalreporter):
    import sys
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results):
            terminalreporter.write_line(line)
