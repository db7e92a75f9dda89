from .batching import PairedBatch, TextBatch, epoch_steps, make_batches
from .dataset import Dataset, load_dataset, read_meta
from .records import (CaptionRecord, ComplementaryPair, QARecord, concatenate_qa,
                      index_complementary_pairs, majority_answer, read_manifest, write_manifest)
from .synthetic import SyntheticSceneSpec, generate_synthetic_dataset
from .vocab import Vocabulary, build_vocabulary, detokenize, tokenize

__all__ = [
    "CaptionRecord", "ComplementaryPair", "Dataset", "PairedBatch", "QARecord", "SyntheticSceneSpec",
    "TextBatch", "Vocabulary", "build_vocabulary", "concatenate_qa", "detokenize", "epoch_steps",
    "generate_synthetic_dataset", "index_complementary_pairs", "load_dataset", "majority_answer",
    "make_batches", "read_manifest", "read_meta", "tokenize", "write_manifest",
]
