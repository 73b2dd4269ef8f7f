from .decode import Hypothesis, beam_decode, greedy_decode
from .loss import Lattice, forward_backward, rnnt_loss
from .model import RnntModel, joint_forward

__all__ = ["Hypothesis", "Lattice", "RnntModel", "beam_decode", "forward_backward", "greedy_decode",
           "joint_forward", "rnnt_loss"]
