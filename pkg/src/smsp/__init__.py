"""Mask-score pruning pool with one-shot sub-network selection.

Build a pool of mask-pruned models for many small classification tasks,
then prune a pre-trained network for a new task in a single shot by
summing the mask scores of its most similar pool tasks and briefly
fine-tuning the extracted sub-network.
"""

from .amp import AmpConfig, AmpResult, amp_objective, amp_prune, build_pool_entry
from .autograd import (
    NonFiniteError,
    Parameter,
    Tensor,
    backward,
    cross_entropy,
    no_grad,
    zero_grad,
)
from .baselines import random_subnetwork, run_random_mask_baseline
from .data import (
    DataFormatError,
    Dataset,
    SyntheticSpec,
    TaskData,
    TaskSpec,
    generate_synthetic,
    load_dataset,
    sample_tasks,
    save_dataset,
    task_data,
)
from .nets import (
    Architecture,
    ConvSpec,
    DenseSpec,
    FlopsLedger,
    MaskedNetwork,
    clone_network,
    count_flops,
    desk_cnn,
    desk_mlp,
    extract_subnetwork,
    init_network,
    load_network,
    masked_forward,
    save_network,
    track_training_flops,
)
from .optim import LrSchedule, Sgd, cosine_lr, sgd_step
from .pool import ChecksumError, Pool, PoolError, PrunedRecord
from .pretrain import pretrain_backbone
from .selection import (
    SmspConfig,
    SmspRun,
    fine_tune,
    one_shot_prune,
    select_neighbors,
    smsp_pipeline,
    sum_masks,
)
from .tasksim import (
    LeepScore,
    SimilarityTable,
    build_similarity_table,
    leep_from_predictions,
    leep_score,
    overlap_ratio,
    top_k_units,
)

__version__ = "0.1.0"
