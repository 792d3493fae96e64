from enum import Enum

import numpy as np
import numpy.typing as npt

# Dense row-major float64 matrix; every W and b in the network is one of these.
Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]


class Activation(str, Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"


class RngPurpose(str, Enum):
    INIT = "init"
    SYNTH = "synth"
    NOISE = "noise"
    SPLIT = "split"
    SHUFFLE = "shuffle"
    SAMPLING = "sampling"
    SEARCH = "search"
    GRADCHECK = "gradcheck"
