import pytest
import torch

from extractor.model import BOS, TinyCausalLM, answer_span, build_sequence, encode


class TestModel:
    def test_same_seed_same_parameters(self):
        a = TinyCausalLM("micro", seed=3)
        b = TinyCausalLM("micro", seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seeds_differ(self):
        a = TinyCausalLM("micro", seed=3)
        b = TinyCausalLM("micro", seed=4)
        assert any(not torch.equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters()))

    def test_forward_shapes(self):
        model = TinyCausalLM("micro", seed=0)
        tokens = torch.tensor([BOS] + encode("hello"), dtype=torch.long)
        logits, hidden = model(tokens)
        assert logits.shape == (1, 6, 257)
        assert hidden.shape == (1, 6, model.d_model)

    def test_layer_selectors(self):
        model = TinyCausalLM("tiny", seed=0)
        first = sum(p.numel() for p in model.layer_parameters("first"))
        middle = sum(p.numel() for p in model.layer_parameters("middle"))
        last = sum(p.numel() for p in model.layer_parameters("last"))
        everything = sum(p.numel() for p in model.layer_parameters("all"))
        assert first == middle == last
        assert everything == model.n_layers * first

    def test_middle_is_floor_half(self):
        model = TinyCausalLM("tiny", seed=0)  # 4 layers -> index 2
        assert model.layer_parameters("middle")[0] is next(model.blocks[2].parameters())

    def test_unknown_preset_rejected(self):
        with pytest.raises(ValueError, match="model id"):
            TinyCausalLM("huge", seed=0)


class TestAnswerSpan:
    def test_span_follows_last_delimiter(self):
        tokens = build_sequence("img. ", "what is it?", "a kite", "\n")
        start, stop = answer_span(tokens, "\n")
        assert tokens[start:stop] == encode("a kite")

    def test_delimiter_inside_image_is_skipped(self):
        tokens = build_sequence("line one\n", "question", "answer", "\n")
        start, stop = answer_span(tokens, "\n")
        assert tokens[start:stop] == encode("answer")

    def test_missing_delimiter_rejected(self):
        with pytest.raises(ValueError, match="delimiter"):
            answer_span([BOS] + encode("no delim here"), "\n")

    def test_empty_answer_rejected(self):
        with pytest.raises(ValueError, match="empty answer"):
            answer_span(build_sequence("", "ctx", "", "\n")[: len(encode("ctx")) + 2], "\n")
