"""Desk-scale synthetic domain-adaptation benchmark for the SPR pipeline."""

from .config import (ExperimentConfig, ModelConfig, Schedule, SelfTrainSchedule, SPRParams,
                     ToyDomainConfig, dump_config, load_config, parse_config, standard_config)
from .data import DomainData, DomainPair, generate_domain_pair, taint_target_labels
from .metrics import Metrics, confusion_matrix, iou_from_confusion, metrics_from_predictions
from .model import ClassifierParams, backward, forward, forward_cache, init_params, zero_params
from .train import (evaluate, grad_check, predict, self_training_stage, spr_objective,
                    train_source_only, train_spr, trace_csv)
