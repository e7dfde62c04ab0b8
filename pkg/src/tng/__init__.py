"""Goal-directed navigation from imitation-learned trajectory controllers
composed into a directed graph, plus the deterministic 2D world and the
evaluation harness used to measure them."""

from .world import (
    COMMAND_CLIP,
    Environment,
    EnvironmentSpecError,
    FeaturizerConfig,
    Intersection,
    MotorCommand,
    Observation,
    Pose,
    Trajectory,
    WorldState,
    assemble_environment,
    build_environment,
    cross_track,
    observe,
    step_unicycle,
    wrap_angle,
)
from .imitation import (
    Dataset,
    DemoSample,
    ExpertConfig,
    ExpertLostError,
    ExpertPolicy,
    RegressionController,
    augment_dataset,
    augment_shift,
    collect_demonstrations,
    dagger_iterate,
    expert_command,
    regression_act,
    train_regression,
)
from .detection import (
    Abstain,
    DetectionController,
    DirectionDetector,
    DirectionLabel,
    GeometricDirectionOracle,
    PidState,
    detect,
    detection_act,
    label_direction,
    pid_step,
    train_detector,
)
from .graph import (
    EpisodeLog,
    ExecutiveConfig,
    GoalReacher,
    IntersectionClassifier,
    NoPathError,
    Plan,
    TngGraph,
    TrajectoryClassifier,
    build_tng,
    build_tng_from_environment,
    classify_trajectory,
    detect_intersection,
    enroll_goal,
    enroll_intersection,
    execute,
    goal_reached,
    identify_goal,
    localize,
    plan,
    train_trajectory_classifier,
)
from .evaluation import (
    DegradationReport,
    LapReport,
    MatrixReport,
    SupervisorConfig,
    TrajectorySupervisor,
    percentage_autonomy,
    perturb_environment,
    run_degradation_study,
    run_lap_experiment,
    run_navigation_matrix,
)
from .optim import GradientConfig

__version__ = "0.1.0"
