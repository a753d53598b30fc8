"""boxverify: train object detectors from verification answers only.

The training loop never sees a drawn box: machine-proposed detections
are verified by an annotator (human, or simulated from hidden ground
truth), positively verified boxes retrain the detector, and negative
verdicts shrink each image's proposal search space.
"""

from .geometry import Box, area, ioa, iou
from .dataset import Dataset, DatasetError, ImageRecord, ProposalRecord, load_dataset, save_dataset
from .synthetic import SyntheticConfig, generate_synthetic, noisy_benchmark, separable_benchmark
from .annotator import (
    AnnotatorProfile,
    AnswerValue,
    QuestionKind,
    SimulatedAnnotator,
    VerificationEvent,
    VerificationQuestion,
    calibrate_temperature,
    oracle_yes_no,
    oracle_ypcmm,
)
from .pruning import SearchSpace, Strategy, StrategyError
from .detector import Detection, ScorerModel, TrainConfig, detect_test, train_detector
from .mil import MilConfig, run_mil
from .loop import LoopConfig, RunState, run
from .metrics import corloc, export_curves, mean_ap, state_corloc, voc_ap

__version__ = "0.1.0"
