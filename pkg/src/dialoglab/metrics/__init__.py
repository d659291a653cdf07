"""Diversity, embedding-similarity and learned unreferenced metrics."""

from dialoglab.metrics.embeddings import EmbeddingProvider, FileEmbeddings, RandomEmbeddings, save_embeddings
from dialoglab.metrics.learned import TrainedScorer, UnreferencedScorer, roc_auc, sample_negatives, train_unreferenced
from dialoglab.metrics.reference import (
    cosine,
    distinct_n,
    embedding_average,
    greedy_idf_f1,
    greedy_idf_scores,
    greedy_matching,
    vector_extrema,
)
from dialoglab.metrics.report import COLUMNS, MetricReport, evaluate, format_table

__all__ = [
    "COLUMNS",
    "EmbeddingProvider",
    "FileEmbeddings",
    "MetricReport",
    "RandomEmbeddings",
    "TrainedScorer",
    "UnreferencedScorer",
    "cosine",
    "distinct_n",
    "embedding_average",
    "evaluate",
    "format_table",
    "greedy_idf_f1",
    "greedy_idf_scores",
    "greedy_matching",
    "roc_auc",
    "sample_negatives",
    "save_embeddings",
    "train_unreferenced",
    "vector_extrema",
]
