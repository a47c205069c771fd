"""Shoebox room simulation."""

from src.acoustics.models import ArrayGeometry, RoomSpec, SourceSpec
from src.acoustics.room_sim import broadband_excitation, sabine_absorption, simulate_rir

__all__ = [
    "ArrayGeometry",
    "RoomSpec",
    "SourceSpec",
    "broadband_excitation",
    "sabine_absorption",
    "simulate_rir",
]
