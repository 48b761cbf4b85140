"""Hierarchical fault-pattern profiling of incident tickets."""
from .config import TrainConfig, preset_config
from .ingest import IncidentTicket, build_incident_context, clean_text, parse_tickets
from .taxonomy import Taxonomy, ancestor_closure, load_taxonomy, shortest_path_distance

__version__ = "0.1.0"

__all__ = [
    "IncidentTicket",
    "Taxonomy",
    "TrainConfig",
    "ancestor_closure",
    "build_incident_context",
    "clean_text",
    "load_taxonomy",
    "parse_tickets",
    "preset_config",
    "shortest_path_distance",
]
