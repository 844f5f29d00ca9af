"""Deterministic simulator for federated learning of continuous prompts on a
frozen dual-encoder classifier, with baselines and a closed-form cost model."""

from fedprompt._kernels import BACKEND as KERNEL_BACKEND
from fedprompt.backbone import (
    Backbone,
    encode_class,
    generate_synthetic_backbone,
    load_backbone,
    save_backbone,
)
from fedprompt.costmodel import (
    CostReport,
    federation_cost,
    inference_flops,
    training_flops,
    transfer_seconds,
)
from fedprompt.federation import ClientUpdate, FederationConfig, aggregate, local_train, run, select_clients
from fedprompt.metrics import accuracy, confusion_matrix, macro_f1, weighted_f1
from fedprompt.partitioning import PartitionSpec, partition, synthesize_labels
from fedprompt.prompt import (
    PromptVectors,
    init_prompt,
    load_prompt,
    loss_and_grad,
    predict,
    save_prompt,
    trainable_parameter_ratio,
)
from fedprompt.tensor import DualTensor, Tensor, matmul, softmax

__version__ = "0.1.0"
