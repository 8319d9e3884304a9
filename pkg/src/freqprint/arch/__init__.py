"""Architecture description language and its spatial/spectral simulation."""

from .dsl import ENUMS, MAX_RESOLUTION, ArchSpec, BlockSpec, ParseError, parse, to_text
from .sim import ArchSimulator, components

__all__ = ["ArchSpec", "BlockSpec", "ParseError", "parse", "to_text", "ENUMS",
           "MAX_RESOLUTION", "ArchSimulator", "components"]
