from .cpc import CpcConfig, CpcModel, cpc_forward, cpc_loss, sample_negatives
from .features import (
    extract_features,
    finetune_ssl,
    train_contrastive,
    train_masked_lm,
    train_vq,
)
from .mlm import MaskedLmConfig, MaskedLmModel, mask_batch, mlm_loss
from .quantizer import Codebook, VqModel, kmeans_fit, kmeans_train, quantize

__all__ = [
    "Codebook",
    "CpcConfig",
    "CpcModel",
    "MaskedLmConfig",
    "MaskedLmModel",
    "VqModel",
    "cpc_forward",
    "cpc_loss",
    "extract_features",
    "finetune_ssl",
    "kmeans_fit",
    "kmeans_train",
    "mask_batch",
    "mlm_loss",
    "quantize",
    "sample_negatives",
    "train_contrastive",
    "train_masked_lm",
    "train_vq",
]
