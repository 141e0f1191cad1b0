"""Tangible-terrain wind simulation: relief blocks steer a Coriolis-forced
westerly flow over a continental map, visualized as particle trails and storms."""

__version__ = "0.1.0"
