"""Handwritten digit recognition with CNNs and deep belief networks on numpy."""
from .dataio import LabeledDataset, load_dir, load_idx, stratified_split
from .dbn import DbnClassifier, DbnConfig, finetune, greedy_pretrain
from .filters import GaborSpec, gabor_bank, gaussian_bank
from .rbm import CdConfig, RbmParams
from .tensor import make_rng
from .training import (NetworkConfig, TrainReport, build_network, evaluate, param_count,
                       train)

__version__ = "0.1.0"
