"""Structured prototype regularization for unsupervised domain adaptation."""

from .errors import ContractError, DivergenceError, ShapeError, SPRError
from .losses import (LossReport, SimilarityTensor, contrastive_loss, cross_entropy, one_hot,
                     prototype_similarity, total_contrastive)
from .numerics import IGNORE, MISSING, masked_mean, outer, softmax_rows
from .pixelalign import (PixelStats, attention_weights, entropy_map, pixel_stats,
                         prototype_pixel_distances, pseudo_labels, reliability_mask,
                         soft_assignment)
from .prototypes import PrototypeState, blend_prototypes, carry_forward, estimate_prototypes
from .structure import (InteractionTensors, RegularizedPrototypes, correlation_distance,
                        decoupled_interactions, inter_class_interaction, interaction_storage_bytes,
                        intra_class_interaction, normalize_inter, normalize_intra,
                        regularize_prototypes, structural_regularization, weighted_prototypes)

__version__ = "0.1.0"
