import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from clqg.data import gen_toy_languages
from clqg.estimator import CrossLingualQG, check_pairs, check_sentences
from clqg.training import TrainConfig

TINY = TrainConfig.toy(d_model=16, n_heads=2, ffn_dim=32, private_layers=1, shared_layers=1,
                       batch_size=8, pretrain_epochs=1, qg_epochs=1, max_len=12)


@pytest.fixture(scope="module")
def toy():
    return gen_toy_languages(16, 20, seed=0)


def test_params_round_trip():
    est = CrossLingualQG(variant="transformer", num_merges=30, seed=4, config=TINY)
    params = est.get_params()
    assert params["variant"] == "transformer" and params["seed"] == 4
    again = clone(est)
    assert again.get_params()["num_merges"] == 30
    est.set_params(variant="clqg")
    assert est.variant == "clqg"


def test_fit_predict_score(toy):
    X, y = toy.qg_pri.sentences, toy.qg_pri.questions
    est = CrossLingualQG(variant="clqg", num_merges=30, config=TINY)
    est.fit(X, y, mono_pri=toy.mono_pri.lines, mono_sec=toy.mono_sec.lines, qg_sec=toy.qg_sec.pairs)
    preds = est.predict(X[:4])
    assert len(preds) == 4 and all(isinstance(p, str) for p in preds)
    assert 0.0 <= est.score(X[:4], y[:4]) <= 100.0


def test_variant_requirements(toy):
    X, y = toy.qg_pri.sentences, toy.qg_pri.questions
    with pytest.raises(ValueError, match="mono_pri"):
        CrossLingualQG(variant="transformer+pretraining", config=TINY).fit(X, y)
    with pytest.raises(ValueError, match="mono_sec"):
        CrossLingualQG(variant="clqg", config=TINY).fit(X, y, mono_pri=toy.mono_pri.lines)
    with pytest.raises(ValueError, match="unknown variant"):
        CrossLingualQG(variant="bert", config=TINY).fit(X, y)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        CrossLingualQG().predict(["a b"])


def test_validation_helpers():
    assert check_sentences(["a  b", "c"]) == ["a b", "c"]
    with pytest.raises(TypeError):
        check_sentences("abc")
    with pytest.raises(TypeError):
        check_sentences(["a", 3])
    with pytest.raises(ValueError):
        check_sentences([" "])
    with pytest.raises(ValueError):
        check_sentences([])
    with pytest.raises(ValueError, match="inconsistent"):
        check_pairs(["a", "b"], ["c"])
