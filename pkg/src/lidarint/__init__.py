"""LiDAR intensity simulation toolkit.

Converts raw point clouds into multi-channel spherical images (including a
geometry-derived incidence-angle channel), trains two compact learned
intensity predictors (a masked-L2 encoder-decoder and a conditional
adversarial pair), and evaluates them with ablation tables, error
histograms, and error heatmaps.
"""

from .cloud import CameraFrame, ParseReport, PointCloud, colorize, read_labels, read_point_cloud
from .exceptions import (
    ConfigError,
    DataError,
    EmptyCloudError,
    GridMismatchError,
    InsufficientPointsError,
    LabelMismatchError,
    LidarIntError,
    MalformedFileError,
    ModalityUnavailableError,
    TrainingFault,
)
from .projection import (
    COMBO_ORDER,
    ProjectionConfig,
    SphericalImage,
    channel_names,
    combo_name,
    parse_combo,
    select_channels,
    spherical_project,
    unproject,
)
from .geometry import (
    IncidenceResult,
    NormalEstimate,
    estimate_incidence,
    estimate_normal,
    incidence_angle,
    incidence_channel,
    knn,
    orient_toward_sensor,
)

__version__ = "0.1.0"
