"""Cloud masking of satellite landmark chips with per-illumination-range SVMs."""

from .archive import LandmarkChip, read_chip, scan_archive, write_chip
from .ensemble import EnsembleModel, load_ensemble, predict_chip, save_ensemble, train_ensemble
from .metrics import ConfusionMatrix, cohens_kappa, confusion, evaluate, overall_accuracy
from .radiometry import calibrate_chip, load_calibration
from .sampling import SampleSpec
from .svm import SvmModel, cv_grid_search, smo_train

__version__ = "0.1.0"
