import json

import numpy as np
import pytest

from curator.datamodel import (
    DataPool,
    merge_pool,
    read_bundle,
    validate_bundle,
    write_bundle,
)

from conftest import make_record


def build_bundle(tmp_path, n=100, seed=0, name="bundle"):
    rng = np.random.default_rng(seed)
    records = [make_record(f"s{i:04d}", rng=rng) for i in range(n)]
    out = tmp_path / name
    write_bundle(records, out, dataset_id="ds")
    return out, records


class TestValidateBundle:
    def test_valid_bundle_passes_all_checks(self, tmp_path):
        bundle, _ = build_bundle(tmp_path)
        report = validate_bundle(bundle)
        assert report.ok
        assert all(c.ok for c in report.checks)

    def test_nll_truncated_within_sample_7(self, tmp_path):
        bundle, _ = build_bundle(tmp_path)
        offsets = np.fromfile(bundle / "offsets.u64", dtype="<u8")
        # cut nll_txt so it ends inside sample 7's span
        cut = int(offsets[7]) + 1
        assert cut < int(offsets[8])
        data = np.fromfile(bundle / "nll_txt.f32", dtype="<f4")[:cut]
        data.tofile(bundle / "nll_txt.f32")
        report = validate_bundle(bundle)
        assert not report.ok
        assert report.fatal.name == "nll_lengths"
        assert "sample 7" in report.fatal.detail

    def test_grad_matrix_truncated_by_4_bytes(self, tmp_path):
        bundle, _ = build_bundle(tmp_path)
        raw = (bundle / "grad.f32").read_bytes()
        (bundle / "grad.f32").write_bytes(raw[:-4])
        report = validate_bundle(bundle)
        assert not report.ok
        assert report.fatal.name == "matrix_sizes"
        assert "grad.f32" in report.fatal.detail

    def test_empty_nll_span_names_sample(self, tmp_path):
        bundle, _ = build_bundle(tmp_path)
        offsets = np.fromfile(bundle / "offsets.u64", dtype="<u8").copy()
        offsets[3] = offsets[4]  # sample 3 becomes empty, totals unchanged
        offsets.tofile(bundle / "offsets.u64")
        report = validate_bundle(bundle)
        assert not report.ok
        assert report.fatal.name == "nll_lengths"
        assert "sample 3" in report.fatal.detail

    def test_non_finite_value_located(self, tmp_path):
        bundle, _ = build_bundle(tmp_path)
        grad = np.fromfile(bundle / "grad.f32", dtype="<f4").copy()
        d_g = json.loads((bundle / "manifest.json").read_text())["d_g"]
        grad[5 * d_g + 2] = np.nan
        grad.tofile(bundle / "grad.f32")
        report = validate_bundle(bundle)
        assert not report.ok
        assert report.fatal.name == "finite_values"
        assert "sample 5" in report.fatal.detail

    def test_missing_file_is_fatal(self, tmp_path):
        bundle, _ = build_bundle(tmp_path)
        (bundle / "sem.f32").unlink()
        report = validate_bundle(bundle)
        assert not report.ok
        assert report.fatal.name == "files_present"

    def test_fail_fast_stops_at_first_fatal(self, tmp_path):
        bundle, _ = build_bundle(tmp_path)
        (bundle / "manifest.json").write_text("{not json")
        report = validate_bundle(bundle)
        assert not report.ok
        assert report.checks[-1].name == "manifest_parses"
        assert sum(not c.ok for c in report.checks) == 1

    def test_validate_never_mutates_input(self, tmp_path):
        bundle, _ = build_bundle(tmp_path)
        before = {p.name: p.read_bytes() for p in bundle.iterdir()}
        validate_bundle(bundle)
        after = {p.name: p.read_bytes() for p in bundle.iterdir()}
        assert before == after


class TestRoundTrip:
    def test_write_read_write_is_byte_identical(self, tmp_path):
        bundle, _ = build_bundle(tmp_path, n=37, seed=5)
        records = read_bundle(bundle)
        second = tmp_path / "second"
        write_bundle(records, second, dataset_id="ds")
        for path in sorted(bundle.iterdir()):
            assert (second / path.name).read_bytes() == path.read_bytes(), path.name


class TestMergePool:
    def test_merge_into_empty(self):
        records = [make_record(f"a{i}") for i in range(10)]
        pool = merge_pool(DataPool(samples=()), records, timestep=3)
        assert len(pool) == 10
        assert pool.timestep == 3
        assert pool.cluster_of is None

    def test_merge_nothing_updates_timestep(self):
        pool = merge_pool(DataPool(samples=()), [make_record(f"a{i}") for i in range(10)], 0)
        pool2 = merge_pool(pool, [], timestep=4)
        assert pool2.sample_ids == pool.sample_ids
        assert pool2.timestep == 4

    def test_duplicate_id_names_offender(self):
        pool = merge_pool(DataPool(samples=()), [make_record("a0")], 0)
        with pytest.raises(ValueError, match="a0"):
            merge_pool(pool, [make_record("a0")], 1)

    def test_merge_clears_cluster_assignments(self):
        pool = merge_pool(DataPool(samples=()), [make_record(f"a{i}") for i in range(4)], 0)
        pool = pool.with_clusters({sid: 0 for sid in pool.sample_ids}, 1)
        merged = merge_pool(pool, [make_record("b0")], 1)
        assert merged.cluster_of is None

    def test_content_associative_over_disjoint_batches(self):
        a = [make_record(f"a{i}") for i in range(5)]
        b = [make_record(f"b{i}") for i in range(7)]
        ab = merge_pool(merge_pool(DataPool(samples=()), a, 0), b, 1)
        ba = merge_pool(merge_pool(DataPool(samples=()), b, 0), a, 1)
        assert set(ab.sample_ids) == set(ba.sample_ids)


class TestRecordValidation:
    def test_nll_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="lengths differ"):
            make_record("x", nll_img=[0.1, 0.2], nll_txt=[0.1])

    def test_negative_nll_rejected(self):
        with pytest.raises(ValueError):
            make_record("x", nll_img=[-0.1, 0.2], nll_txt=[0.1, 0.2])

    def test_empty_nll_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            make_record("x", nll_img=[], nll_txt=[])
