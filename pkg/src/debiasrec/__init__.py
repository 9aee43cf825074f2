"""Bias-aware news recommendation with a synthetic biased-click simulator.

Click behaviour on news platforms is shaped by presentation (display
position and size) as well as genuine interest.  This package trains a
content-based recommender that models those presentation effects
explicitly — a bias representation of (position, size), bias-aware
attention over the clicked history, and a click score decomposed into
bias plus preference — and ranks candidates at test time by the
preference score alone.  A simulator with known ground truth generates
biased logs so the debiasing can be verified end to end.
"""

__version__ = "0.1.0"

from .bias import BiasFeatures, BrmVariant, bias_repr
from .config import RunConfig, desk_profile, load_config, paper_profile
from .core import additive_attention, conv1d_same, dropout, softmax
from .kernels import LANE as kernel_lane
from .metrics import (auc, chi_square, ctr_by_bucket, evaluate, mrr,
                      ndcg_at_k)
from .model import (DebiasModel, ScoringMode, instance_loss, rank_candidates,
                    read_checkpoint, score, write_checkpoint)
from .optim import AdamHyper, ParamStore, adam_step, grad_check
from .sim import GroundTruth, SimConfig, generate_catalog, generate_dataset, generate_logs
from .text import Vocab, build_vocab, encode_title, tokenize
from .train import EvalScorer, evaluate_split, sample_negatives, train_model
from .user import ClickHistory, encode_user
