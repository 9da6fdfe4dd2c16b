"""Speech synthesis and speaker statistics from a convolutional CTC acoustic model's activations."""
from .autodiff import get_dtype, precision, set_precision
from .frontend import DEFAULT, TOY, FrontendConfig, features
from .losses import LossSpec, LossTerm, default_loss_spec
from .network import NetworkSpec, WeightStore, init_random, load_weights, full_spec, save_weights, toy_spec

__version__ = "0.1.0"
