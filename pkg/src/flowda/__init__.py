"""Paired-coupling latent flow matching for image-to-image domain adaptation."""

from .codec import Codec, decode, encode, fit_pca, identity_codec, refit_decoder
from .coupling import couple, couple_independent, couple_minibatch_ot, couple_paired
from .errors import ConfigurationError, FormatError, NonFiniteError, RejectedInput
from .interpolant import conditional_velocity, interpolate, make_training_point
from .sampler import integrate, linear_schedule, sigmoid_schedule, translate
from .velocity import TrainConfig, forward, fm_loss, grad, train

__version__ = "0.1.0"
