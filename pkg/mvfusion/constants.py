# Tolerances shared by every module. Features are d x m float64 arrays, one
# sample per column.
ORTHONORMAL_TOL = 1e-10
UNIT_NORM_TOL = 1e-8
RECONSTRUCTION_TOL = 1e-8
PROJECTOR_TOL = 1e-10
TRACE_TOL = 1e-8
TRACE_BOUND_REL_TOL = 1e-8
MONOTONICITY_TOL = 1e-10
# accepted log-log slope of fusion error against local perturbation
CONSISTENCY_SLOPE_RANGE = (0.8, 1.2)
# Relative threshold under which a fused singular value counts as zero
RANK_TOL = 1e-10
MIN_FEATURE_NORM = 1e-12

DEFAULT_EPSILON_SQ = 0.5
DEFAULT_LOCAL_RANK = 10
DEFAULT_FUSED_RANK = 16
DEFAULT_BATCH_SIZE = 128
DEFAULT_BETA_MIN = 0.2
MAX_COVERAGE_ATTEMPTS = 100

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

EARLY_STOP_REL_CHANGE = 1e-6
EARLY_STOP_WINDOW = 10
# noise-free latents per class mapped through the encoders for ground truth distances
TRUTH_SAMPLE_COUNT = 64

# Binary formats, all little endian
BASIS_MAGIC = b"MCRB"
BASIS_VERSION = 1
# ids are u32 on the wire
MAX_MESSAGE_ID = 2**32 - 1
DATASET_MAGIC = b"MVDS"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"MVFE"
CHECKPOINT_VERSION = 1
