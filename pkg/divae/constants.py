DEFAULT_MODELS_PATH = "models"
DEFAULT_CONFIG_PATH = "configs/desk.cfg"
DEFAULT_RESULTS_PATH = "results"

CHECKPOINT_FORMAT_VERSION = "1.0"
CHECKPOINT_MANIFEST_FILE = "manifest.json"
CHECKPOINT_WEIGHTS_FILE = "weights.bin"
CHECKPOINT_CONFIG_FILE = "config.cfg"
CHECKPOINT_OPTIMIZER_DIR = "optimizer"
CHECKPOINT_LOCK_FILE = ".lock"
METRICS_LOG_FILE = "metrics.jsonl"

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
LABELS_FILE = "labels.tsv"
MIN_DATASET_IMAGES = 10

FEATURE_EXTRACTOR_VERSION = "fid-proxy-v1"
FEATURE_EXTRACTOR_SEED = 20220616
FEATURE_EXTRACTOR_RESOLUTION = 64

# reference values reported for ImageNet-256 training on a large cluster,
# not reproducible with the desk presets
REFERENCE_RECONSTRUCTION_FID = {"f8": 1.24, "f16": 4.07}
REFERENCE_TEXT_TO_IMAGE_FID = 11.53
REFERENCE_INJECTION_METHOD_FID = {"concat": 11.58,
                                  "add": 11.61,
                                  "attention": 13.35}
REFERENCE_INJECTION_POSITION_FID = {"encoder": 13.08,
                                    "middle": 11.58,
                                    "decoder": 13.06}
