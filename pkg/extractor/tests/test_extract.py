import json

import numpy as np
import pytest

from extractor.extract import ExtractionConfig, extract_stats, load_dataset, make_demo_dataset

from conftest import curator_validate


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "demo.jsonl"
    make_demo_dataset(path, n=8, seed=2)
    return load_dataset(path)


def read_nll(bundle, name):
    offsets = np.fromfile(bundle / "offsets.u64", dtype="<u8")
    flat = np.fromfile(bundle / name, dtype="<f4")
    return [flat[offsets[i] : offsets[i + 1]] for i in range(len(offsets) - 1)]


class TestExtract:
    def test_bundle_passes_engine_validation(self, demo, tmp_path):
        out = extract_stats(demo, ExtractionConfig(model_id="micro", proj_output_dim=64), tmp_path / "b")
        result = curator_validate(out)
        assert result.returncode == 0, result.stdout + result.stderr

    def test_text_determined_answer_has_unit_image_grounding(self, tmp_path):
        samples = [{"sample_id": "s0", "image": "", "context": "say", "answer": "yes"}]
        out = extract_stats(samples, ExtractionConfig(model_id="micro", proj_output_dim=16), tmp_path / "b")
        img = read_nll(out, "nll_img.f32")[0]
        txt = read_nll(out, "nll_txt.f32")[0]
        assert np.array_equal(img, txt)  # both passes see the same tokens

    def test_image_changes_the_conditioned_stream(self, tmp_path):
        samples = [{"sample_id": "s0", "image": "a long visual prefix. ", "context": "say", "answer": "yes"}]
        out = extract_stats(samples, ExtractionConfig(model_id="micro", proj_output_dim=16), tmp_path / "b")
        img = read_nll(out, "nll_img.f32")[0]
        txt = read_nll(out, "nll_txt.f32")[0]
        assert len(img) == len(txt)
        assert not np.array_equal(img, txt)

    def test_same_seed_byte_identical(self, demo, tmp_path):
        config = ExtractionConfig(model_id="micro", proj_output_dim=32, seed=7)
        a = extract_stats(demo, config, tmp_path / "a")
        b = extract_stats(demo, config, tmp_path / "b")
        for path in sorted(a.iterdir()):
            assert (b / path.name).read_bytes() == path.read_bytes(), path.name

    def test_zero_order_matches_backprop_dimension(self, demo, tmp_path):
        bp = extract_stats(
            demo[:2], ExtractionConfig(model_id="micro", proj_output_dim=32), tmp_path / "bp"
        )
        zo = extract_stats(
            demo[:2],
            ExtractionConfig(model_id="micro", proj_output_dim=32, grad_mode="zero_order", n_probes=4),
            tmp_path / "zo",
        )
        d_bp = json.loads((bp / "manifest.json").read_text())["d_g"]
        d_zo = json.loads((zo / "manifest.json").read_text())["d_g"]
        assert d_bp == d_zo == 32

    def test_zero_order_restores_parameters(self, demo, tmp_path):
        # two extractions must not contaminate each other through the model
        config = ExtractionConfig(model_id="micro", proj_output_dim=32, grad_mode="zero_order", n_probes=2)
        a = extract_stats(demo[:2], config, tmp_path / "a")
        b = extract_stats(demo[:2], config, tmp_path / "b")
        assert (a / "grad.f32").read_bytes() == (b / "grad.f32").read_bytes()

    def test_all_layers_mode_concatenates(self, demo, tmp_path):
        config = ExtractionConfig(model_id="micro", layer="all", proj_output_dim=64)
        out = extract_stats(demo[:2], config, tmp_path / "b")
        assert curator_validate(out).returncode == 0

    def test_nll_streams_non_negative_finite(self, demo, tmp_path):
        out = extract_stats(demo, ExtractionConfig(model_id="micro", proj_output_dim=16), tmp_path / "b")
        for name in ("nll_img.f32", "nll_txt.f32"):
            flat = np.fromfile(out / name, dtype="<f4")
            assert np.all(np.isfinite(flat)) and np.all(flat >= 0)

    def test_missing_fields_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"context": "no answer"}\n')
        with pytest.raises(ValueError, match="answer"):
            load_dataset(path)
