"""Poisson-likelihood matrix factorization and cold-start recommender baselines."""
from ._backend import BACKEND
from .algorithms import (
    ALL_KINDS,
    RecommenderKind,
    TrainedRecommender,
    classic_mf_train,
    dotmat_train,
    hybrid_train,
    poissonmat_train,
    predict,
    random_placement_train,
    train,
    zeromat_train,
    zipf_placement_train,
)
from .core import FactorModel, PoissonParams, TrainConfig, init_embeddings
from .eval import EvalReport, LearningRateGrid, fairness_matthew, grid_search, mae
from .ingest import (
    Dataset,
    RatingTriple,
    parse_comoda,
    parse_generic_csv,
    parse_movielens_1m,
    synth_zipf_dataset,
    train_test_split,
)

__version__ = "0.1.0"
