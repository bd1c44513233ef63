import math

import numpy as np
import pytest

from clqg.bpe import learn_bpe
from clqg.data import gen_toy_languages
from clqg.decoding import (DecodeResult, batch_generate, greedy_decode, read_predictions,
                           write_predictions)
from clqg.transformer import ModelConfig
from clqg.xmodel import CrossLingualTransformer


@pytest.fixture(scope="module")
def setup():
    toy = gen_toy_languages(60, 30, seed=0)
    bpe = learn_bpe([toy.mono_pri.lines, toy.mono_sec.lines, toy.qg_pri.questions], 60)
    cfg = ModelConfig(vocab_size=len(bpe), d_model=16, n_heads=2, private_layers=1, shared_layers=1,
                      dropout=0.1, max_positions=64)
    model = CrossLingualTransformer(cfg, seed=0, pad_id=bpe.pad_id)
    return toy, bpe, model


def test_max_len_one(setup):
    toy, bpe, model = setup
    res = greedy_decode(model, bpe, toy.mono_pri.lines[0], "pri", max_len=1)
    assert len(res.tokens) == len(res.per_step_logprob) == 1
    assert res.terminated == ("EOS" if res.tokens == [bpe.eos_id] else "max_len")


def test_logprobs_are_log_probabilities(setup):
    toy, bpe, model = setup
    for line in toy.mono_sec.lines[:10]:
        res = greedy_decode(model, bpe, line, "sec", max_len=8)
        assert len(res.per_step_logprob) == len(res.tokens)
        assert all(lp <= 0 and 0 < math.exp(lp) <= 1 for lp in res.per_step_logprob)
        assert res.logprob_sum <= 0
        assert res.text == bpe.decode(res.tokens)


def test_decoding_leaves_training_mode_and_weights(setup):
    toy, bpe, model = setup
    model.train()
    before = model.checksums()
    greedy_decode(model, bpe, toy.mono_pri.lines[1], "pri", max_len=5)
    assert model.training and model.checksums() == before
    model.eval()


def test_batched_equals_one_at_a_time(setup):
    toy, bpe, model = setup
    lines = list(toy.mono_pri.lines[:50])
    batched = batch_generate(model, bpe, lines, "pri", max_len=10, batch_size=16)
    assert len(batched) == 50
    for line, res in zip(lines, batched):
        single = greedy_decode(model, bpe, line, "pri", max_len=10)
        assert res.tokens == single.tokens
        np.testing.assert_allclose(res.per_step_logprob, single.per_step_logprob, atol=1e-4)


def test_identical_lines_identical_outputs(setup):
    toy, bpe, model = setup
    line = toy.mono_sec.lines[3]
    a, b = batch_generate(model, bpe, [line, toy.mono_sec.lines[4], line], "sec", max_len=6)[::2]
    assert a.tokens == b.tokens


def test_bad_lines_become_error_results(setup):
    toy, bpe, model = setup
    out = batch_generate(model, bpe, [toy.mono_pri.lines[0], "   ", 7], "pri", max_len=4)
    assert out[0].terminated in ("EOS", "max_len")
    assert [r.terminated for r in out[1:]] == ["error", "error"]
    with pytest.raises(ValueError):
        greedy_decode(model, bpe, "  ", "pri")
    with pytest.raises(ValueError):
        batch_generate(model, bpe, [], "pri")
    with pytest.raises(ValueError):
        greedy_decode(model, bpe, "x", "pri", max_len=0)


def test_prediction_file_round_trip(tmp_path):
    results = [DecodeResult([7, 2], "क्या ?", [-0.5, -0.25], "EOS"),
               DecodeResult([], "", [], "error", "empty")]
    path = tmp_path / "pred.jsonl"
    write_predictions(path, ["a b", ""], results)
    records = read_predictions(path)
    assert records[0] == {"input": "a b", "prediction": "क्या ?", "logprob_sum": -0.75, "terminated": "EOS"}
    assert records[1]["error"] == "empty"
