"""Facility placement from call detail records.

Pipeline: ingest raw tower and call files, estimate night-time residence
per tower, aggregate towers into weighted residential regions, build travel
cost matrices between region centres, and solve a p-median model.
"""
from .geo import BoundaryPolygon, GeoPoint
from .pmedian import FacilitySolution, PMedianInstance, solve

__all__ = ["BoundaryPolygon", "GeoPoint", "FacilitySolution", "PMedianInstance", "solve"]
__version__ = "0.1.0"
