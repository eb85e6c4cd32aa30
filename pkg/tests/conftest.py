import contextlib
import io
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from blcs import cli  # noqa: E402
from blcs import relation_net as rnet  # noqa: E402


class TrainedModel:
    def __init__(self, path, stdout, code):
        self.path = path
        self.stdout = stdout
        self.code = code
        self.model = rnet.loads_model(Path(path).read_text())


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """The relation model produced by ``blcs train`` on the bundled default config."""
    out = tmp_path_factory.mktemp("train")
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli.main(["train", "--out", str(out)])
    return TrainedModel(out / "model.json", buf.getvalue(), code)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
