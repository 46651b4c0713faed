"""Fermi acceleration in a mushroom billiard with slowly moving walls."""
from .geometry import MushroomShape, PhaseVolumes, ShapeError, delta, delta_prime, volumes
from .protocol import (BreathingCircle, Protocol, ProtocolError, RectangleCycle, SinusoidalCycle,
                       StaticProtocol, reference_rectangle, reference_sinusoid, protocol_from_dict)

__version__ = "0.1.0"
