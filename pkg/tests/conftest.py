import contextlib

import numpy as np
import pytest

from curator.datamodel import DataPool, SampleRecord

# Acceptance criteria record one line each; printed in the terminal summary.
ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


@contextlib.contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        ACCEPTANCE_RESULTS.append((name, "FAIL"))
        raise
    ACCEPTANCE_RESULTS.append((name, "PASS"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{status}  {name}")


def make_record(
    sample_id,
    dataset_id="ds",
    t=0,
    grad=None,
    sem=None,
    nll_img=None,
    nll_txt=None,
    el2n=0.5,
    entropy=0.5,
    d_g=8,
    d_s=4,
    rng=None,
):
    rng = rng or np.random.default_rng(abs(hash(sample_id)) % (2**32))
    if grad is None:
        grad = rng.normal(size=d_g)
    if sem is None:
        sem = rng.normal(size=d_s)
    if nll_img is None:
        nll_img = rng.uniform(0.1, 2.0, size=int(rng.integers(4, 12)))
    if nll_txt is None:
        nll_txt = np.asarray(nll_img) * 1.2
    return SampleRecord(
        sample_id=sample_id,
        dataset_id=dataset_id,
        timestep_added=t,
        gradient_vec=np.asarray(grad, dtype=np.float32),
        semantic_vec=np.asarray(sem, dtype=np.float32),
        nll_with_image=np.asarray(nll_img, dtype=np.float32),
        nll_text_only=np.asarray(nll_txt, dtype=np.float32),
        el2n_raw=float(el2n),
        entropy_raw=float(entropy),
    )


def make_pool(n=20, k=None, seed=0, **record_kwargs):
    """Pool of n records; assigns round-robin clusters when k is given."""
    rng = np.random.default_rng(seed)
    records = [make_record(f"s{i:04d}", rng=rng, **record_kwargs) for i in range(n)]
    pool = DataPool(samples=tuple(records), timestep=0)
    if k is not None:
        assignments = {r.sample_id: i % k for i, r in enumerate(records)}
        pool = pool.with_clusters(assignments, k)
    return pool


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture
def pool_factory():
    return make_pool
