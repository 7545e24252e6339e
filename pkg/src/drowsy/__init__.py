"""Driver drowsiness monitoring: reduced-scale Haar face detection with
rotation and illumination fallbacks, Kalman tracking, eigen-eye and block-LBP
eye localization, linear-SVM eye state and windowed PERCLOS."""
from .cascade import CascadeModel, load_cascade, parse_cascade
from .detect import Detection, detect_face_downsampled, detect_with_rotations
from .eye import EigenModel, lbp_train, pca_train, scan_eye_lbp, scan_eye_pca
from .imgcore import GrayFrame, RectF, bhe, integral, rect_sum
from .pipeline import PipelineConfig, ingest, process
from .state import SvmModel, perclos_windows, svm_predict, svm_train
from .track import KalmanConfig, kf_correct, kf_init, kf_predict, track_step

__version__ = "0.1.0"
