"""Demonstration-driven manipulation planning with an analytic descriptor field."""

from .descriptor import (
    FeatureTrajectory,
    FieldConfig,
    FieldEvaluator,
    QuerySet,
    decode_trajectory,
    default_query_set,
    encode,
    encode_trajectory,
    estimate_object_pose,
    optimize_pose,
)
from .errors import NodTampError
from .geometry import Pose, PointCloud, compose, interpolate, invert, transform_cloud
from .adaptation import (
    AdaptationResult,
    ConstraintStore,
    SceneEntry,
    SceneGraph,
    adapt_trajectory,
    register_clouds,
)
from .planner import (
    GoalSpec,
    Plan,
    PlanSkeleton,
    SkeletonStep,
    cost_matrix,
    plan_random,
    plan_skills,
)
from .skills import (
    Constraint,
    RawDemo,
    SkillRecord,
    SkillSpan,
    build_skill,
    constraint_feature,
    extract_contact_events,
    load_library,
    save_library,
    segment_demo,
)
from .motion import CollisionModel, MotionQuery, check_collision, densify, plan_motion
from .sim import World, check_goal, detect_contacts, execute_plan, grip, inject_noise, step
from .tasks import (
    TASKS,
    TaskSpec,
    build_library,
    demo_world,
    eval_task,
    generate_task,
    noise_sweep,
    run_trial,
    scripted_expert,
)
from .io import CameraIntrinsics, RunConfig, backproject, canonical_dumps

__version__ = "0.1.0"
