"""Cross-scene transfer lab: gradient surgery toward an EMA cosine
target, logit normalization, distance-correlation restriction, and
symmetric-KL ensemble distillation, exercised on synthetic spectral
classification tasks."""

from .agreement import (GradState, LogitNormConfig, cosine_similarity,
                        ema_update, gradvac_update, logitnorm, logitnorm_ce,
                        magnitude_similarity)
from .data import (SceneDataset, SynthConfig, generate_pair, load_csv,
                   sample_k_per_class, save_csv)
from .disagreement import (DistillConfig, dcor_loss, distance_correlation,
                           double_center, ensemble_loss_agree,
                           ensemble_loss_disagree, ensemble_total,
                           kl_divergence, pairwise_distances, symmetric_kl)
from .harness import (RunReport, TrainConfig, ablate, evaluate, load_checkpoint,
                      load_config, save_checkpoint, train, write_log)
from .metrics import (ConfusionMatrix, average_accuracy, cohen_kappa,
                      overall_accuracy)
from .model import (ModelBundle, forward_ensemble, forward_source,
                    forward_target_agree, forward_target_disagree,
                    shared_gradients)
from .nn import (Layer, Mlp, ParamSet, adam_step, ce_logit_grad, cross_entropy,
                 linear_forward, make_rng, relu_backward, relu_forward, softmax)

__version__ = "0.1.0"
