"""Automatic liver attenuation measurement from CT volumes and liver masks."""

from alarm.errors import AlarmError
from alarm.volgrid import Mask, Volume

__version__ = "0.1.0"

__all__ = ["AlarmError", "Mask", "Volume", "__version__"]
