"""DFT-spread OTFS with superimposed pilots for joint sensing and communication."""

from .channel import CddsOperator, ChannelSpec, Mode, PathParams
from .lattice import FrameParams, Grid, PilotConfig, QamAlphabet

__all__ = ["CddsOperator", "ChannelSpec", "FrameParams", "Grid", "Mode", "PathParams", "PilotConfig", "QamAlphabet"]
__version__ = "0.1.0"
