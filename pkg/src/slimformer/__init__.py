"""Hybrid transformer compression at desk scale.

Low-rank factorization and magnitude pruning share one parameter
budget, a planner splits that budget across weight groups, and an
iterative pipeline re-compresses a student while distilling it against
its frozen teacher.  Everything runs on numpy float64 so every number
in the method can be checked exactly.
"""

from .analysis import (bias_histogram, bias_matrix, bias_study,
                       compare_curves, comparison_csv, compressed_matrix,
                       gaussian_testbed, histogram_csv)
from .budget import (CompressionPlan, allocate, implied_overall, load_plan,
                     plan_check, plan_from_fractions, random_search,
                     save_plan, solve_budget, transformer_shapes)
from .distill import (DistillConfig, distill_injections, distill_step,
                      mse_loss, prediction_loss, total_distill_loss)
from .factorize import (LowRankPair, factor_ratio, factorize_layer,
                        rank_for_ratio, reconstruct)
from .hybrid import FactoredLayer, compress_layer, effective_weight, \
    hybrid_ratio
from .model import (TOY_CONFIG, Adam, EncoderModel, ModelConfig, init_model,
                    load_model, save_model)
from .pipeline import (budget_sequence, compress_model, interpolated_plan,
                       one_shot_compress, record_curve, run_pipeline,
                       truncated_config_for_budget)
from .prune import (PruneMask, apply_mask, magnitude_mask, ones_for_fraction,
                    sparsity, topk_mask)
from .svd import SvdResult, svd, truncate, truncation_error
from .tasks import (SyntheticTask, TaskConfig, evaluate, generate_task,
                    train_classifier)
from .tensor import DenseMatrix, ParamBundle, load_bundle, save_bundle

__version__ = "0.1.0"
