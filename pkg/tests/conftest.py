import hashlib
from pathlib import Path

import pytest

from headsplat.cli import main

TINY_INI = """\
[data]
resolution = 32
[reconstructor]
patch = 8
depth = 1
dim = 32
heads = 2
[noise_predictor]
image_size = 16
patch = 4
depth = 1
dim = 32
heads = 2
[diffusion]
timesteps = 50
sampler_steps = 5
[train]
steps = 3
log_every = 1
"""


def hash_tree(root) -> str:
    """Digest of every file's relative path and bytes under ``root``."""
    h = hashlib.sha256()
    root = Path(root)
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="session")
def tree_hash():
    return hash_tree


@pytest.fixture(scope="session")
def tiny_ini(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY_INI)
    return str(path)


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="session")
def cli_run(tmp_path_factory, tiny_ini):
    """A dataset and both trained toy models, produced through the command line."""
    root = tmp_path_factory.mktemp("cli")
    assert run_cli("gen-data", "--config", tiny_ini, "--scenes", 2, "--ring", 6, "--random", 8,
                   "--out", root / "data") == 0
    manifest = root / "data" / "manifest.json"
    assert run_cli("train", "--config", tiny_ini, "--stage", "finetune", "--two-stage", "off",
                   "--manifest", manifest, "--out", root / "recon") == 0
    assert run_cli("train", "--config", tiny_ini, "--stage", "diffusion", "--manifest", manifest,
                   "--out", root / "diff") == 0
    return {"root": root, "manifest": manifest,
            "recon": root / "recon" / "reconstructor.ckpt",
            "diff": root / "diff" / "diffusion.ckpt"}


@pytest.fixture(scope="session")
def overfit(tmp_path_factory):
    """The single-scene overfit run shared by the acceptance suite and slow training tests."""
    from experiments import run_overfit

    return run_overfit(tmp_path_factory.mktemp("overfit"))


CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome; the summary prints one line each."""
    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        CRITERIA[number] = (title, bool(passed), detail)
        print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} {detail}")
        assert passed, f"criterion {number} failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 13):
        if number not in CRITERIA:
            terminalreporter.write_line(f"criterion {number:2d} NOT RUN (or errored before "
                                        f"its check)")
            continue
        title, passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: "
                                    f"{title} {detail}")
