"""
config.py - Central configuration for the HD-map raster/vector toolkit.
Contains all file paths, grid defaults, per-stage parameters, and thresholds.
"""

import os

# ============================================================
# Project root directory (parent of config/)
# ============================================================
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# ============================================================
# Output paths
# ============================================================
OUTPUTS_DIR = os.path.join(BASE_DIR, "outputs")
MASK_MANIFEST_NAME = "masks.json"

# Schema version written into every scene / manifest / report file
SCENE_FORMAT_VERSION = "1"
REPORT_FORMAT_VERSION = "1"
COORD_DECIMALS = 6

# ============================================================
# BEV grid (meters, meters-per-pixel)
# ============================================================
GRID_X_MIN = -15.0
GRID_X_MAX = 15.0
GRID_Y_MIN = -30.0
GRID_Y_MAX = 30.0
GRID_RESOLUTION = 0.15   # 200 x 400 pixels
EGO_POSITION = (0.0, 0.0)

# ============================================================
# Rasterizer
# ============================================================
DIVIDER_WIDTH_PX = 1          # Line thickness for dividers
LABEL_DILATION_RADIUS = 0     # Dilation applied to stored labels (0 = off)
LABEL_DILATION_SHAPE = "square"
CURB_MODE = "polygon"         # "polygon" (connected domains) or "polyline"
CURB_MODES = ("polygon", "polyline")

# ============================================================
# Tracer (Potrace-style)
# ============================================================
TURN_POLICY = "minority"
TURD_SIZE = 2                 # Despeckle: drop paths with |area| < this
TRACE_SMOOTH = False
CORNER_THRESHOLD = 1.0        # alpha-max
FLATNESS_TOLERANCE_PX = 0.25  # Bezier flattening tolerance

# ============================================================
# Vectorization post-processing
# ============================================================
CONFIDENCE_THRESHOLD = 0.5
EDGE_MARGIN_PX = 1.0
CURB_WALL_OFFSET_PX = 0.5   # Curb runs move onto the wall pixel centres
CENTERLINE_SAMPLES = 50
SIMPLIFY_EPS_PX = 1.0

# ============================================================
# Bilateral matcher
# ============================================================
W_CLS = 2.0
W_CE = 5.0
W_DICE = 5.0
MATCH_DILATION_RADIUS = 2
MATCH_DILATION_SHAPE = "square"
PROB_CLAMP = 1e-6
TIE_TOLERANCE = 1e-9        # Relative slack when comparing assignment totals

# ============================================================
# Evaluation
# ============================================================
CD_THRESHOLDS_STRICT = (0.2, 0.5, 1.0)
CD_THRESHOLDS_LOOSE = (0.5, 1.0, 1.5)
CD_THRESHOLD_PRESETS = {
    "strict": CD_THRESHOLDS_STRICT,
    "loose": CD_THRESHOLDS_LOOSE,
}
SAMPLE_INTERVAL = 0.1         # meters, curve resampling before Chamfer

# ============================================================
# Perturbation (synthetic predictions)
# ============================================================
PERTURB_SIGMA = 0.0
PERTURB_DROP_PROB = 0.0
PERTURB_SPURIOUS_RATE = 0.0
PERTURB_BLUR_RADIUS = 0.0
PERTURB_CONFIDENCE_MODEL = "oracle"
SPURIOUS_CONFIDENCE = 0.1
DEGRADATION_SIGMAS = (0.0, 0.1, 0.3, 0.6)

# ============================================================
# Synthetic scene generator
# ============================================================
DIFFICULTIES = ("easy", "hard")
LANE_WIDTH = 3.5

# ============================================================
# Visualization (class palette: lanes blue, ped crosses green, curbs red)
# ============================================================
CLASS_COLORS = {
    "divider": "blue",
    "ped_crossing": "green",
    "curb": "red",
}

# ============================================================
# Worker pool
# ============================================================
N_JOBS = 1

# ============================================================
# Random seed for reproducibility
# ============================================================
RANDOM_SEED = 42
