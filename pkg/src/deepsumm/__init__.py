"""Neural summarization of Java methods with recurrent and Transformer encoder-decoders."""

from .corpus import Vocabulary, build_vocab, tokenize_code, tokenize_comment
from .decoding import AttentionRecord, greedy_decode
from .metrics import corpus_bleu, perplexity
from .seq2seq import Seq2Seq, Seq2SeqConfig
from .tensor import Tensor, backward, no_grad
from .training import TrainHyper, TrainRun, load_model, save_checkpoint, train
from .transformer import Transformer, TransformerConfig

__version__ = "0.1.0"

__all__ = [
    "AttentionRecord",
    "Seq2Seq",
    "Seq2SeqConfig",
    "Tensor",
    "TrainHyper",
    "TrainRun",
    "Transformer",
    "TransformerConfig",
    "Vocabulary",
    "backward",
    "build_vocab",
    "corpus_bleu",
    "greedy_decode",
    "load_model",
    "no_grad",
    "perplexity",
    "save_checkpoint",
    "tokenize_code",
    "tokenize_comment",
    "train",
]
