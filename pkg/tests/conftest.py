import math
import os
import subprocess
import sys
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from jsslab import domains, flux, limits, mesh, pmc

INNER = math.pi / 2 - 0.2
ACCEPTANCE = []


def record(number, ok, detail):
    """Print and keep one pass/fail line of an acceptance criterion."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def scherk():
    """The Scherk square pipeline at eps=0.05, h=0.02, k in 1, 4, 16, 64."""
    t0 = time.perf_counter()
    d = domains.scherk_square()
    aux = mesh.build_auxiliary_domain(d, 0.05)
    m = mesh.mesh_auxiliary(aux, 0.02, mirror="diagonal")
    prob = pmc.prepare_problem(aux, m)
    results = pmc.solve_schedule(prob, (1, 4, 16, 64))
    report = flux.verify_jss(d)
    run = limits.analyze_limit(results, report, omega=limits.interior_mask(prob))
    seconds = time.perf_counter() - t0
    V = m.vertices
    inner = (np.abs(V[:, 0]) <= INNER) & (np.abs(V[:, 1]) <= INNER)
    return SimpleNamespace(domain=d, aux=aux, mesh=m, prob=prob, results=results, report=report, run=run,
                           inner=inner, seconds=seconds)


INPUTS = Path(__file__).resolve().parents[1] / "inputs"


def run_cli(*args, cwd=None):
    """Run the command line in a fresh interpreter and return the completed process."""
    return subprocess.run([sys.executable, "-m", "jsslab", *map(str, args)], capture_output=True, text=True,
                          cwd=cwd)


@pytest.fixture(scope="session")
def scherk_cli_runs(tmp_path_factory):
    """Two independent solve-scherk runs on the Scherk square, started side by side."""
    base = tmp_path_factory.mktemp("scherk_cli")
    env = dict(os.environ, JSS_THREADS="1")
    procs = [subprocess.Popen([sys.executable, "-m", "jsslab", "solve-scherk", str(INPUTS / "scherk.yaml"),
                               "--out", str(base / name)], stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                              text=True, env=env) for name in ("a", "b")]
    codes = []
    for p in procs:
        p.communicate()
        codes.append(p.returncode)
    return SimpleNamespace(dirs=(base / "a", base / "b"), codes=codes)
