"""Incremental intent detection over continuous token streams.

Recurrent sequence models consume simulated ASR output one word at a time,
detect utterance boundaries, and commit intent decisions at each boundary.
Five variants cover offline and online training regimes, a standalone EOS
detector, and multi-task models with optional EOS-to-intent feedback.
"""

from .corpus import (Corpus, CorpusError, StreamSample, StreamSet, Utterance,
                     Vocabulary, build_vocab, gen_synthetic, load_corpus, save_corpus,
                     stitch_streams)
from .estimator import EosDetector, StreamingIntentClassifier
from .evaluation import (EarlyDetectionDist, EarlyDetectionResult, EvalReport, UttRecord,
                         early_detection, eval_eos, eval_oracle, eval_predicted,
                         paired_positions, permutation_test)
from .models import (CheckpointError, ModelConfig, Parameters, Variant, forward,
                     gradcheck_variant, init_model, load_checkpoint, save_checkpoint,
                     step)
from .streaming import (CompositeSession, EosDetected, Hypothesis, IntentCommitted,
                        Session, open_composite, open_session, push, push_composite,
                        run_composite)
from .training import (GridSearchResult, TrainHistory, TrainSpec, grid_search,
                       make_config, train)

__version__ = "0.1.0"

__all__ = [
    "Corpus", "CorpusError", "StreamSample", "StreamSet", "Utterance", "Vocabulary",
    "build_vocab", "gen_synthetic", "load_corpus", "save_corpus", "stitch_streams",
    "EosDetector", "StreamingIntentClassifier",
    "EarlyDetectionDist", "EarlyDetectionResult", "EvalReport", "UttRecord",
    "early_detection", "eval_eos", "eval_oracle", "eval_predicted",
    "paired_positions", "permutation_test",
    "CheckpointError", "ModelConfig", "Parameters", "Variant", "forward",
    "gradcheck_variant", "init_model", "load_checkpoint", "save_checkpoint", "step",
    "CompositeSession", "EosDetected", "Hypothesis", "IntentCommitted", "Session",
    "open_composite", "open_session", "push", "push_composite", "run_composite",
    "GridSearchResult", "TrainHistory", "TrainSpec", "grid_search", "make_config",
    "train",
]
