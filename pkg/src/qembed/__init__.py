"""Quality-embedding model for learning classifiers from noisy labels."""

from .data import Dataset, NoiseConfig, corrupt_labels, gen_synthetic, split
from .metrics import average_precision, evaluate, kmeans_binarize
from .network import Model, ModelDims, model_forward
from .numkit import AffineLayer, RandomSource
from .objective import total_loss
from .optimizer import TrainingConfig, gradient_check, train, train_baseline
from .samplers import DecaySchedule, gaussian_reparam, gumbel_softmax_binary

__version__ = "0.1.0"
