"""E91 key distribution with CHSH eavesdropper detection, feeding a logistic-map image cipher."""

from .chaos import ChaosParams, KeyStream, derive_params, keystream, logistic_map
from .cipher import GrayImage, decrypt, encrypt, to_grayscale, xor_image
from .e91 import (
    ChshReport,
    EveConfig,
    RoundRecord,
    SessionConfig,
    SessionTranscript,
    detect_eavesdropper,
    estimate_chsh,
    eve_knowledge,
    qber,
    run_session,
)
from .imageio import load_image, read_pgm, write_pgm
from .metrics import MetricsReport, analyze, entropy, histogram, npcr, uaci
from .quantum import Angle, TwoQubitState, joint_expectation, measure, prepare_bell

__version__ = "0.1.0"
