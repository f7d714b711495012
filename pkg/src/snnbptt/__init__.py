"""Surrogate-gradient BPTT for spiking networks, with a throughput benchmark."""

from .autograd import Tag, Tape, TimeSplit
from .model import NetworkSpec, build, forward_unrolled
from .neuron import NeuronModel, NeuronParams
from .surrogate import SurrogateKind
from .tensor import Precision, Tensor

__version__ = "0.1.0"

__all__ = ["NetworkSpec", "NeuronModel", "NeuronParams", "Precision", "SurrogateKind", "Tag",
           "Tape", "Tensor", "TimeSplit", "build", "forward_unrolled"]
