"""Sequential Monte Carlo dropout: online neural model adaptation by
particle filtering over dropout masks, with a two-link-arm benchmark."""

__version__ = "0.1.0"

from .arm import (ArmTask, DatasetSpec, analytic_jacobian, forward_kinematics,
                  generate_dataset, make_eval_episode, step_dynamics,
                  telescoping_length)
from .baselines import (GradientAdaptation, NoAdaptation, OraclePfAdaptation,
                        OraclePfConfig, SmcdAdaptation, make_strategy)
from .bench import BenchConfig, ResultRow, SweepConfig, lookahead_benchmark, run_sweep
from .control import ControlTask, ControlTrace, pd_control, run_control_episode
from .filter import (FilterConfig, FilterState, Observation, effective_sample_size,
                     init_filter, log_likelihood, mmse_mask, posterior_predict,
                     resample, step, transition)
from .interpret import (MaskBankEntry, build_mask_bank, confidence_score,
                        knn_masks, topk_link_accuracy)
from .net import (DropoutNet, MaskParticle, TrainConfig, forward_masked,
                  forward_mean, gradient_step_online, init_net, input_jacobian,
                  load_net, sample_mask, save_net, train)
