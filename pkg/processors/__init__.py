# processors/__init__.py
from .surrogate_builder import SurrogateBuilder, build_surrogate, build_grid_surrogate
from .demand import DemandProfiles, TripRecord, ingest_trips, demand_profiles, gen_synthetic_demand, sample_trips
from .report import ReportBuilder, build_report

__all__ = [
    'SurrogateBuilder', 'build_surrogate', 'build_grid_surrogate',
    'DemandProfiles', 'TripRecord', 'ingest_trips', 'demand_profiles', 'gen_synthetic_demand', 'sample_trips',
    'ReportBuilder', 'build_report',
]
