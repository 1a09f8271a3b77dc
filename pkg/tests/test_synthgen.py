import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from curator.clustering import kmeans
from curator.datamodel import read_bundle, validate_bundle
from curator.synthgen import SkillSpec, StreamSpec, generate


def three_skill_spec(count=100, **kwargs):
    skills = tuple(SkillSpec(name=f"skill{i}", count=count) for i in range(3))
    return StreamSpec(n_timesteps=1, skills=skills, **kwargs)


class TestGenerate:
    def test_bundles_validate_and_kmeans_recovers_skills(self, tmp_path):
        spec = three_skill_spec(count=100, separation=10.0, seed=1)
        stream = generate(spec, tmp_path / "s")
        report = validate_bundle(stream.bundle_dirs[0])
        assert report.ok, report.describe()
        records = read_bundle(stream.bundle_dirs[0])
        x = np.stack([r.gradient_vec for r in records])
        model = kmeans(x, 3, seed=2, ids=[r.sample_id for r in records])
        truth = [stream.labels[r.sample_id] for r in records]
        truth_idx = [int(t[-1]) for t in truth]
        assert adjusted_rand_score(truth_idx, model.labels) >= 0.99

    def test_duplicate_fraction_exact_by_id_map(self, tmp_path):
        spec = three_skill_spec(count=77, duplicate_fraction=0.1, seed=3)
        stream = generate(spec, tmp_path / "s")
        per_skill = int(np.floor(0.1 * 77))
        assert len(stream.duplicate_of) == 3 * per_skill
        records = read_bundle(stream.bundle_dirs[0])
        by_id = {r.sample_id: r for r in records}
        for dup, orig in stream.duplicate_of.items():
            assert np.array_equal(by_id[dup].gradient_vec, by_id[orig].gradient_vec)
            assert np.array_equal(by_id[dup].semantic_vec, by_id[orig].semantic_vec)
            assert stream.labels[dup] == stream.labels[orig]

    def test_same_spec_twice_is_byte_identical(self, tmp_path):
        spec = three_skill_spec(count=40, duplicate_fraction=0.05, seed=4)
        a = generate(spec, tmp_path / "a")
        b = generate(spec, tmp_path / "b")
        for da, db in zip(a.bundle_dirs, b.bundle_dirs):
            for path in sorted(da.iterdir()):
                assert (db / path.name).read_bytes() == path.read_bytes(), path.name
        assert a.labels_path.read_bytes() == b.labels_path.read_bytes()

    def test_labels_cover_every_sample(self, tmp_path):
        spec = three_skill_spec(count=25, duplicate_fraction=0.2, seed=5)
        stream = generate(spec, tmp_path / "s")
        records = read_bundle(stream.bundle_dirs[0])
        assert {r.sample_id for r in records} == set(stream.labels)

    def test_near_duplicate_mode_hits_target_cosine(self, tmp_path):
        spec = three_skill_spec(count=30, duplicate_fraction=0.1, seed=6)
        spec = StreamSpec(
            n_timesteps=1,
            skills=spec.skills,
            duplicate_fraction=0.1,
            seed=6,
            near_duplicate_cosine=0.99,
        )
        stream = generate(spec, tmp_path / "s")
        records = {r.sample_id: r for r in read_bundle(stream.bundle_dirs[0])}
        for dup, orig in stream.duplicate_of.items():
            a = np.asarray(records[dup].semantic_vec, dtype=np.float64)
            b = np.asarray(records[orig].semantic_vec, dtype=np.float64)
            cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
            assert cos == pytest.approx(0.99, abs=1e-3)

    def test_multi_timestep_ids_are_globally_unique(self, tmp_path):
        skills = (SkillSpec(name="a", count=20), SkillSpec(name="b", count=20))
        stream = generate(StreamSpec(n_timesteps=4, skills=skills, seed=7), tmp_path / "s")
        seen = set()
        for bundle in stream.bundle_dirs:
            for r in read_bundle(bundle):
                assert r.sample_id not in seen
                seen.add(r.sample_id)
