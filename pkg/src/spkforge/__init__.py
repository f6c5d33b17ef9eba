"""Desk-scale speaker-embedding toolkit.

Staged training recipes over a from-scratch autodiff core, margin-based
objectives, cosine scoring with adaptive normalization and calibration,
verification metrics, and a local registry of packaged models.
"""

from .audio import Waveform, load_waveform, save_waveform, speed_perturb
from .config import RecipeConfig, load_config, parse_config_text
from .errors import SpkforgeError
from .extractor import Extractor, ExtractorConfig, build_extractor
from .features import FeatureSequence, MelConfig, mel_spectrogram
from .metrics import eer, min_dcf, sasv_eer
from .packaging import Registry, load_by_name, load_package, package_model, register
from .pipeline import run_pipeline
from .scoring import AsNormConfig, as_norm, cosine_score, score_trials
from .trainer import TrainConfig, train
from .trials import Trial, load_trials, make_trials, save_trials

__version__ = "0.1.0"
