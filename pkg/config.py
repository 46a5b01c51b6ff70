# Default run settings
# Values here are used when neither the run-config file nor a CLI flag sets them

# Time stepping
FINAL_TIME = 50.0
N_STEPS = 50

# Boundary setup: g = 1 on the top face, zero flux elsewhere
DIRICHLET = {"top": 1.0}
LABEL_TOLERANCE_FACTOR = 0.5  # times the estimated node spacing

# Coarse grid and multiscale space
COARSE_CELLS = 5
BASIS_COUNT = 4
DENSE_EIGEN_LIMIT = 4000
EIGEN_TOLERANCE = 1e-10
BASIS_FORMAT_VERSION = 1

# Linear solvers
SOLVER_METHOD = "conjugate_gradient"
SOLVER_RTOL = 1e-10
SOLVER_MAX_ITER = 10_000
LOCAL_FLOW_RTOL = 1e-12

# Network generation
BOX_LENGTH = 1.0
REMOVAL_PROB = 0.2
KNN = 6
DIAMETER_MIN = 0.1
DIAMETER_MAX = 1.0
VISCOSITY = 1.0
MIN_COMPONENT_NODES = 10
DUPLICATE_POINT_RETRIES = 10

# Upscaling
FLOW_LAYER_FACTOR = 0.1  # delta = factor * H_k
UNSOLVABLE_FACE_LIMIT = 0.5

# Worker pool
THREADS = 1

# Named run presets: dotted settings applied over the defaults above, under any run-config file and CLI flag
# external_field presets still need properties.field_path (--field)
_CONTRAST_2D = [[[0.1, 0.2], [0.3, 0.8]], [[0.6, 0.1], [0.8, 0.5]], [[0.5, 0.7], [0.9, 0.8]]]
_CONTRAST_3D = [[[0.1, 0.1, 0.2], [0.3, 0.3, 0.8]], [[0.6, 0.5, 0.1], [0.8, 0.8, 0.5]],
                [[0.4, 0.1, 0.6], [0.9, 0.3, 0.8]]]

PRESETS = {
    # structured regular
    "test-1a": {"network.family": "structured_regular", "network.dims": [200, 200],
                "properties.mode": "external_field", "time.final_time": 20.0},
    "test-1b": {"network.family": "structured_regular", "network.dims": [25, 25, 25],
                "properties.mode": "external_field", "time.final_time": 0.6},
    "test-1c": {"network.family": "structured_regular", "network.dims": [25, 25, 25],
                "properties.mode": "high_contrast", "properties.contrast_boxes": _CONTRAST_3D,
                "time.final_time": 10.0},
    # structured irregular
    "test-2a": {"network.family": "structured_irregular", "network.dims": [240, 240],
                "properties.mode": "poiseuille_random", "time.final_time": 4000.0},
    "test-2b": {"network.family": "structured_irregular", "network.dims": [30, 30, 30],
                "properties.mode": "poiseuille_random", "time.final_time": 200.0},
    "test-2c": {"network.family": "structured_irregular", "network.dims": [30, 30, 30],
                "properties.mode": "high_contrast", "properties.contrast_boxes": _CONTRAST_3D,
                "time.final_time": 10.0},
    # unstructured
    "test-3a": {"network.family": "unstructured", "network.dims": [40000], "network.dim": 2,
                "properties.mode": "poiseuille_random", "time.final_time": 300.0},
    "test-3b": {"network.family": "unstructured", "network.dims": [15625], "network.dim": 3,
                "properties.mode": "poiseuille_random", "time.final_time": 20.0},
    "test-3c": {"network.family": "unstructured", "network.dims": [15625], "network.dim": 3,
                "properties.mode": "high_contrast", "properties.contrast_boxes": _CONTRAST_3D,
                "time.final_time": 10.0},
    # laptop-sized 2D runs
    "desk-regular": {"network.family": "structured_regular", "network.dims": [50, 50],
                     "properties.mode": "poiseuille_random", "time.final_time": 50.0},
    "desk-irregular": {"network.family": "structured_irregular", "network.dims": [55, 55],
                       "properties.mode": "poiseuille_random", "time.final_time": 50.0},
    "desk-unstructured": {"network.family": "unstructured", "network.dims": [2500], "network.dim": 2,
                          "properties.mode": "poiseuille_random", "time.final_time": 50.0},
    "desk-contrast": {"network.family": "structured_regular", "network.dims": [50, 50],
                      "properties.mode": "high_contrast", "properties.contrast_boxes": _CONTRAST_2D,
                      "time.final_time": 10.0},
}