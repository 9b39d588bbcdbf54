"""Head-pose inconsistency DeepFake detection.

Two head poses are estimated per frame, one from the inner-face landmarks and
one from the whole face; an RBF SVM classifies the pose difference.  The PnP
solver detects and corrects the flipped-pose local minimum that near-planar
landmark sets admit.
"""

from .classifier import SvmModel, decision_value, predict_proba, train
from .errors import (
    DegenerateTrainingError,
    HeadPoseError,
    IllConditionedWarning,
    InsufficientPointsError,
    InvalidInputError,
    ModelIncompleteError,
    NumericalFailureError,
    ParseError,
    ProjectionSingularityError,
    SpecInvalidError,
    SplitInfeasibleError,
    UndefinedMetricError,
)
from .evaluation import (
    DatasetManifest,
    ManifestRecord,
    RocCurve,
    conditional_fake_prob,
    flip_contingency,
    histogram,
    identity_leakage_experiment,
    load_manifest,
    roc_auc,
    split_dataset,
)
from .face_camera import (
    CameraIntrinsics,
    FaceModel3D,
    LandmarkSet2D,
    approximate_intrinsics,
    load_default_model,
    load_landmarks,
    load_model,
    project,
    reprojection_cost,
)
from .features import (
    FeatureVector,
    PosePair,
    cosine_distance,
    euler_decompose,
    pose_pair_features,
)
from .pnp import (
    HeadPose,
    SolverConfig,
    detect_flip,
    dlt_initialize,
    estimate_pose,
    flip_pose,
    lm_refine,
    project_to_rotation,
)
from .synthetic import SceneSpec, generate_dataset, generate_model, render_frame, sample_pose

__version__ = "0.1.0"
