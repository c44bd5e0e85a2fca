"""Multi-reward policy optimization lab on a synthetic compositional scene task."""

from .advantage import group_normalize, weighted_total_advantage
from .bench import (
    BenchmarkSuite,
    BenchReport,
    build_suite,
    full_mark_and_fraction,
    gen_prompt,
    neg_corr_ratio,
    pass_concept,
    run_benchmark,
)
from .policy import AdamState, PolicyParams, apply_update, init_params, velocity
from .rewards import (
    RewardConfig,
    RewardVector,
    attribute_reward_contrastive,
    attribute_reward_cosine,
    depth_relation_reward,
    existence_reward,
    inclusion_reward,
    numeracy_reward,
    score_concepts,
    size_reward,
    spatial2d_reward,
)
from .sampler import (
    SamplerConfig,
    Trajectory,
    TrajectoryBatch,
    ode_step,
    sample_trajectories,
    sample_trajectory,
    sde_step,
    transition_logprob,
)
from .objective import kl_penalty, ppo_gradient, ppo_objective
from .scene import (
    Attr,
    BBox,
    Codebook,
    ConceptSpec,
    Count,
    Exist,
    Prompt,
    Rel2D,
    Rel3D,
    Scene,
    SceneObject,
    Size,
    bbox_geometry,
    decode_scene,
    prompt_embed,
)
from .trainer import (
    AGGREGATION_MODES,
    IterationLog,
    PromptSource,
    TrainConfig,
    TrainingDiverged,
    train,
    train_iteration,
)
from .weighting import (
    RewardMatrix,
    concept_weights,
    difficulty_scores,
    pearson_corr_matrix,
)

__version__ = "0.1.0"
