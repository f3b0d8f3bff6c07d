# app/errors.py
from __future__ import annotations

from typing import Optional


class CuboidError(RuntimeError):
    """Base for every failure raised by the refinement library."""

    exit_code = 1


# --- geometry / anchor ---

class GeometryError(CuboidError):
    pass


class EntirelyBehindCamera(GeometryError):
    pass


class DegenerateBox(GeometryError):
    pass


class SensorInsideFootprint(GeometryError):
    pass


class ProjectionDegenerate(GeometryError):
    pass


class InvalidCategory(GeometryError):
    pass


class ParamsError(CuboidError):
    pass


class OutOfRange(ParamsError):
    pass


# --- solver ---

class SolverError(CuboidError):
    pass


class NonFiniteObjective(SolverError):
    pass


class EmptyBatch(SolverError):
    pass


class NoTarget(SolverError):
    pass


# --- matching ---

class MatchingError(CuboidError):
    pass


class NonFiniteCost(MatchingError):
    pass


# --- dataset ---

class DatasetError(CuboidError):
    pass


class ParseError(DatasetError):
    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class SchemaVersionMismatch(DatasetError):
    pass


class UnknownCamera(DatasetError):
    pass


class UnknownFrame(DatasetError):
    pass


# --- config / eval ---

class ConfigError(CuboidError):
    exit_code = 2


class EvalError(CuboidError):
    pass


class MismatchedObjects(EvalError):
    pass
