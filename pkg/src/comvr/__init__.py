"""Center-of-mass voltage regulation of radial feeders by a virtual power plant."""

__version__ = "0.1.0"
