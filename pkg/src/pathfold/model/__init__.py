from .config import load_model, load_model_file, serialize_model
from .fields import ClosedFormField, PolynomialField, differentiate, zero_field
from .mesh import Distribution, StateMesh, mesh_point
from .spec import (ConstraintSpec, LatticeTopology, ModelSpec, Parameter, Term, Variable,
                   validate)
from .timeseries import TimeSeries, ingest_timeseries, timeseries_from_array

__all__ = [
    "ClosedFormField", "ConstraintSpec", "Distribution", "LatticeTopology", "ModelSpec",
    "Parameter", "PolynomialField", "StateMesh", "Term", "TimeSeries", "Variable",
    "differentiate", "ingest_timeseries", "load_model", "load_model_file", "mesh_point",
    "serialize_model", "timeseries_from_array", "validate", "zero_field",
]
