"""Dense networks that grow, mask and prune themselves while training."""
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, load_dataset_csv, write_dataset_csv
from .engine import (LossHistory, PlasticityPolicy, TrainSettings, TriggerDecision,
                     audit_grow_events, convergence_trigger, dropin_loop, neuroplasticity_loop,
                     new_data_trigger, prune_and_retrain, resize_optimizer_state, train_static,
                     validation_monitor)
from .errors import *  # noqa: F401,F403
from .harness import (ArmConfig, ExperimentLog, ForgettingMetrics, TaskSpec, TaskStream,
                      compare_arms, forgetting_metrics, make_task_stream, run_experiment)
from .kernels import BACKEND
from .mutations import MutationEvent, MutationLog
from .network import (Activation, DenseLayer, ForwardTrace, GradientSet, Loss, Network,
                      backward, forward, init_network, loss_eval, sgd_step, validate)
from .plasticity import (DropoutMask, PruneCriterion, grow_neurons, inference_forward_scaled,
                         masked_forward, prune_neurons, pruning_candidates,
                         sample_dropout_mask)
from .relevance import (RelevanceMap, layer_relevance, lrp_scores, select_growth_layer,
                        select_prunable_neurons)

__version__ = "0.1.0"
