"""Iris recognition for post-mortem captures: segmentation, rubber-sheet
normalization, Gabor and learned filter banks, matching and evaluation."""
from .encoding import FilterBank, IrisCode, default_bank, encode, encode_many
from .errors import IrisError
from .evaluation import ScoreSet, build_scores, eer, fnmr_at_fmr, roc_points
from .imaging import GrayImage, Kernel2D, load_gray, save_gray
from .matching import MatchConfig, MatchScore, match
from .normalization import CaptureMeta, IrisPatch, PolarIris, align, curate_patches, unwrap
from .segmentation import Circle, HoughConfig, SegmentationResult, segment

__version__ = "0.1.0"

__all__ = [
    "CaptureMeta", "Circle", "FilterBank", "GrayImage", "HoughConfig", "IrisCode", "IrisError",
    "IrisPatch", "Kernel2D", "MatchConfig", "MatchScore", "PolarIris", "ScoreSet",
    "SegmentationResult", "align", "build_scores", "curate_patches", "default_bank", "eer",
    "encode", "encode_many", "fnmr_at_fmr", "load_gray", "match", "roc_points", "save_gray",
    "segment", "unwrap",
]
