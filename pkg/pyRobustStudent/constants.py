""" pyRobustStudent package constants definition """

# Package version
VERSION = '0.1.0'
# Tensor
DTYPE = 'float64'
# Finite differences
FD_STEP = 1e-5
FD_REL_TOL = 1e-4
FD_SECOND_ORDER_REL_TOL = 1e-3
# Loss defaults (tau, lambda, gamma, C1, C2)
DEFAULT_TAU = 3.0
DEFAULT_LAMBDA = 1.0
DEFAULT_GAMMA = 0.05
DEFAULT_C1 = 1.0
DEFAULT_C2 = 1.0
# Training defaults (full scale)
DEFAULT_LR_LINEAR = 0.17
DEFAULT_LR_CONV = 0.0085
DEFAULT_MOMENTUM = 0.35
DEFAULT_BATCH_SIZE = 128
DEFAULT_EPOCHS = 500
# learning rates are scaled by this factor for desk-scale nets
TOY_LR_SCALE = 0.1
# Training methods
METHOD_ROBUST = 'robust'
METHOD_KD = 'kd'
METHOD_MIMIC = 'mimic'
METHOD_PLAIN = 'plain'
METHOD_TEACHER = 'teacher'
TRAIN_METHODS = (METHOD_ROBUST, METHOD_KD, METHOD_MIMIC, METHOD_PLAIN)
# Network roles
ROLE_TEACHER = 'teacher'
ROLE_STUDENT = 'student'
# Layer kinds
LAYER_MAXOUT_CONV = 'maxout-conv'
LAYER_MAX_POOL = 'max-pool'
LAYER_MAXOUT_DENSE = 'maxout-dense'
LAYER_DENSE = 'dense'
LAYER_SOFTMAX = 'softmax'
LAYER_KINDS = (LAYER_MAXOUT_CONV, LAYER_MAX_POOL, LAYER_MAXOUT_DENSE, LAYER_DENSE, LAYER_SOFTMAX)
DEFAULT_PIECES = 2
# parameter count deviation from a reported figure that gets flagged
PARAM_DEVIATION_TOL = 0.15
# Robustness defaults
DEFAULT_RADIUS = 0.5
DEFAULT_SAMPLES = 1024
DEFAULT_NORM = 2.0
BOUND_SLACK = 1e-9
QUADRATURE_TOL = 1e-4
# Perturbation kinds
PERTURB_NONE = 'none'
PERTURB_GAUSSIAN = 'gaussian-snr'
PERTURB_POISSON = 'poisson'
PERTURB_OCCLUSION = 'occlusion'
PERTURB_KINDS = (PERTURB_NONE, PERTURB_GAUSSIAN, PERTURB_POISSON, PERTURB_OCCLUSION)
# Data
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
GCN_EPS = 1e-8
ZCA_EPS = 1e-2
VALIDATION_SIZE = 10000
VALIDATION_FRACTION = 0.1
TOY_KINDS = ('two-moons-image', 'blob-digits')
PIPELINES = ('none', 'mnist', 'cifar')
# Checkpoint container
CKPT_MAGIC = b'RSCK'
CKPT_FORMAT = 1
# Results
RESULTS_SCHEMA_VERSION = 1
RESULT_COLUMNS = ('method', 'seed', 'condition', 'accuracy', 'mean_score')
TRACE_COLUMNS = ('config_hash', 'code_version')
FLOAT_DIGITS = 6
# Experiment protocols
PROTO_NOISE = 'noise-sweep'
PROTO_CROSS_NOISE = 'cross-noise'
PROTO_OCCLUSION = 'occlusion-sweep'
PROTO_DOMAIN = 'domain-adapt'
PROTO_BOUND = 'bound-report'
PROTO_SINGLE = 'single-train'
PROTOCOLS = (PROTO_NOISE, PROTO_CROSS_NOISE, PROTO_OCCLUSION, PROTO_DOMAIN, PROTO_BOUND, PROTO_SINGLE)
# CLI exit codes
EXIT_OK = 0
EXIT_IO_ERR = 1
EXIT_CONFIG_ERR = 2
EXIT_NUMERIC_ERR = 3
# CLI exit codes as short human-readable
EXIT_TXT = {
    EXIT_OK: 'success',
    EXIT_IO_ERR: 'input/output error',
    EXIT_CONFIG_ERR: 'configuration error',
    EXIT_NUMERIC_ERR: 'numeric abort (non-finite value)',
}
