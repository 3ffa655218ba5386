"""Synthetic field data: generation, preprocessing, file formats, splits and augmentation."""

from .augment import Transform, augment
from .dataset import Dataset, DatasetConfig, MissingBlocksError, generate_dataset
from .io import FormatError, read_mask, read_patch, write_mask, write_patch
from .preprocess import median_denoise, saturation_gate
from .splits import PROTOCOLS, BlockInfo, SplitError, SplitManifest, assert_leakage_free, audit, build_split
from .synth import FIELDS, YEARS, LabelMask, MultispectralPatch, ShiftParams, generate_field, inventory_shift
