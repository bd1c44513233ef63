"""Cross-lingual question generation with shared and language-private transformer layers."""

from .bpe import BpeModel, BpeTokenizer, learn_bpe
from .data import gen_toy_languages, load_corpus, save_corpus
from .decoding import batch_generate, greedy_decode
from .estimator import CrossLingualQG
from .metrics import EvalReport, bleu, evaluate, meteor_simplified, rouge_l
from .pipeline import VARIANTS, ToySuite, train_variant
from .training import TrainConfig, Trainer
from .xmodel import CrossLingualTransformer, load_checkpoint, route, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "BpeModel", "BpeTokenizer", "CrossLingualQG", "CrossLingualTransformer", "EvalReport",
    "ToySuite", "TrainConfig", "Trainer", "VARIANTS", "batch_generate", "bleu", "evaluate",
    "gen_toy_languages", "greedy_decode", "learn_bpe", "load_checkpoint", "load_corpus",
    "meteor_simplified", "route", "rouge_l", "save_checkpoint", "save_corpus", "train_variant",
]
