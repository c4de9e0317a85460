"""Urban-object landuse classification from two precomputed feature modalities.

The package trains a late-fusion linear head over pooled ground-view features
and overhead features, and covers the missing-ground case at prediction time
by retrieving a plausible substitute through a three-view CCA embedding.
"""

from .aggregation import AggregatedFeature, MissingModalityError, aggregate
from .embedding import CcaHyperparams, EmbeddingModel, fit_embedding, fit_pca, project
from .evaluation import EvaluationReport, average_reports, evaluate, sensitivity_sweep
from .fusion import FusionModel, TrainConfig, create_model, cross_entropy_loss, predict, train
from .io import (
    DatasetManifest,
    LabelVocabulary,
    SplitAssignment,
    UrbanObjectRecord,
    load_manifest,
    read_feature_file,
    stratified_split,
    write_feature_file,
)
from .retrieval import RetrievalIndex, build_index, label_coherence_curve, predict_missing, query
from .synth import SynthConfig, generate

__version__ = "0.1.0"
