#!/usr/bin/env python3
"""
Input Validator for kstab
Validates JSON inputs (polytopes, test configurations, grids, run configs) and defines the error types
"""

import json
import logging
import math
import re
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ValidationError, validator
from pydantic.types import conint, confloat

logger = logging.getLogger(__name__)

Number = Union[int, float, str]

# Validation Configuration
VALIDATION_CONFIG = {
    'max_dim': 4,
    'max_grid_dim': 2,
    'max_facets': 64,
    'max_pieces': 32,
    'max_denominator': 10_000,
    'rational_pattern': r"^\s*[+-]?\d+\s*(/\s*\d+\s*)?$",
}


# --------------------------------------------------
# Error types
# --------------------------------------------------

class KstabValidationError(ValueError):
    """Malformed input or violated precondition (exit code 1)"""


class GridTooSmallError(KstabValidationError):
    """Grid box misses the prescribed mass fraction or tail tolerance"""


class NonConvexError(KstabValidationError):
    """A convexity precondition does not hold"""


class CertificateMissingError(KstabValidationError):
    """A ray was handed to a slope driver without its compatibility certificate"""


class ConsistencyError(RuntimeError):
    """Two computations that must agree do not"""


class EntropyError(ArithmeticError):
    """Entropy integrand is not finite somewhere on the grid"""


# --------------------------------------------------
# Number parsing
# --------------------------------------------------

def parse_number(value: Any) -> Union[Fraction, float]:
    """Parse an int, float or 'p/q' string; ints and rational strings stay exact"""
    if isinstance(value, bool):
        raise KstabValidationError(f"Expected a number, got boolean {value!r}")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise KstabValidationError(f"Non-finite number: {value!r}")
        return value
    if isinstance(value, str):
        if re.match(VALIDATION_CONFIG['rational_pattern'], value):
            return Fraction(value.replace(" ", ""))
        try:
            parsed = float(value)
        except ValueError:
            raise KstabValidationError(f"Cannot parse number: {value!r}")
        if not math.isfinite(parsed):
            raise KstabValidationError(f"Non-finite number: {value!r}")
        return parsed
    raise KstabValidationError(f"Expected a number, got {type(value).__name__}")


def parse_rational(value: Any) -> Fraction:
    """Parse a number that must be rational (floats only when they are small-denominator rationals)"""
    parsed = parse_number(value)
    if isinstance(parsed, Fraction):
        return parsed
    candidate = Fraction(parsed).limit_denominator(VALIDATION_CONFIG['max_denominator'])
    if float(candidate) != parsed:
        raise KstabValidationError(f"Slope {value!r} is not rational")
    return candidate


def _check_number(value: Any) -> Any:
    parse_number(value)
    return value


# --------------------------------------------------
# Input models
# --------------------------------------------------

class FacetSpec(BaseModel):
    """Validated facet: primitive inward normal and support number"""
    normal: List[int]
    support: Number

    @validator('normal')
    def validate_normal(cls, v):
        if not v or all(entry == 0 for entry in v):
            raise ValueError("Normal must be a nonzero integer vector")
        if math.gcd(*[abs(entry) for entry in v]) != 1:
            raise ValueError(f"Normal {v} is not primitive")
        return v

    @validator('support')
    def validate_support(cls, v):
        try:
            return _check_number(v)
        except KstabValidationError as e:
            raise ValueError(str(e))


class PolytopeSpec(BaseModel):
    """Validated facet presentation {x : <x, normal> >= -support}"""
    dim: conint(ge=1, le=VALIDATION_CONFIG['max_dim'])
    facets: List[FacetSpec]

    @validator('facets')
    def validate_facets(cls, v, values):
        dim = values.get('dim')
        if dim is None:
            return v
        if len(v) < dim + 1:
            raise ValueError(f"A bounded {dim}-dimensional polytope needs at least {dim + 1} facets")
        if len(v) > VALIDATION_CONFIG['max_facets']:
            raise ValueError(f"At most {VALIDATION_CONFIG['max_facets']} facets allowed")
        for facet in v:
            if len(facet.normal) != dim:
                raise ValueError(f"Normal {facet.normal} does not have dimension {dim}")
        return v


class PieceSpec(BaseModel):
    """Validated affine piece <a, x> + b with rational slope"""
    a: List[Number]
    b: Number

    @validator('a')
    def validate_slope(cls, v):
        try:
            for entry in v:
                parse_rational(entry)
        except KstabValidationError as e:
            raise ValueError(str(e))
        return v

    @validator('b')
    def validate_intercept(cls, v):
        try:
            return _check_number(v)
        except KstabValidationError as e:
            raise ValueError(str(e))


class TestConfigSpec(BaseModel):
    """Validated PL convex function max_j(<a_j, x> + b_j)"""
    pieces: List[PieceSpec]
    base: Optional[Union[str, PolytopeSpec]] = None

    @validator('pieces')
    def validate_pieces(cls, v):
        if not v:
            raise ValueError("At least one piece is required")
        if len(v) > VALIDATION_CONFIG['max_pieces']:
            raise ValueError(f"At most {VALIDATION_CONFIG['max_pieces']} pieces allowed")
        dims = {len(piece.a) for piece in v}
        if len(dims) != 1:
            raise ValueError("All slopes must have the same dimension")
        return v


class GridSpec(BaseModel):
    """Validated uniform box grid on log coordinates"""
    box: List[List[float]]
    resolution: List[conint(ge=5)]

    @validator('box')
    def validate_box(cls, v):
        if not 1 <= len(v) <= VALIDATION_CONFIG['max_grid_dim']:
            raise ValueError("Grids support dimension 1 or 2")
        for interval in v:
            if len(interval) != 2 or not interval[0] < interval[1]:
                raise ValueError(f"Box side {interval} must be [lo, hi] with lo < hi")
        return v

    @validator('resolution')
    def validate_resolution(cls, v, values):
        box = values.get('box')
        if box is not None and len(box) != len(v):
            raise ValueError("Resolution must list one node count per box side")
        return v


class SlopeSetSpec(BaseModel):
    """Validated finite slope set for scans"""
    slopes: List[List[Number]]

    @validator('slopes')
    def validate_slopes(cls, v):
        if not v:
            raise ValueError("Slope set is empty")
        if len({len(slope) for slope in v}) != 1:
            raise ValueError("All slopes must have the same dimension")
        try:
            for slope in v:
                for entry in slope:
                    parse_rational(entry)
        except KstabValidationError as e:
            raise ValueError(str(e))
        return v


class CaseSpec(BaseModel):
    """One verification case: a polytope file and a test configuration file"""
    name: str
    poly: str
    tc: str
    grid: Optional[GridSpec] = None


class RunConfig(BaseModel):
    """Validated verification run configuration"""
    cases: List[CaseSpec]
    t_max: Optional[confloat(gt=0)] = None
    tol: Optional[confloat(gt=0)] = None
    random_cases: conint(ge=0) = 0
    seed: int = 0
    twist: Optional[float] = None
    degrees: List[conint(ge=1)] = [2, 3]
    tolerances: Dict[str, confloat(gt=0)] = {}

    @validator('cases')
    def validate_cases(cls, v):
        names = [case.name for case in v]
        if len(names) != len(set(names)):
            raise ValueError("Case names must be unique")
        return v

    @validator('tolerances')
    def validate_tolerances(cls, v):
        unknown = sorted(set(v) - set(ToleranceSettings.__fields__))
        if unknown:
            raise ValueError(f"Unknown tolerance(s) {', '.join(unknown)}")
        return v


class ToleranceSettings(BaseModel):
    """Tolerances per verification suite"""
    theoremB: confloat(gt=0) = 1e-3
    theoremC: confloat(gt=0) = 1e-2
    weakC: confloat(gt=0) = 1e-6
    basechange: confloat(gt=0) = 1e-10
    twist: confloat(gt=0) = 1e-10
    growth: confloat(gt=0) = 0.3
    hmae: confloat(gt=0) = 1e-6
    affine: confloat(gt=0) = 1e-5


class GridSettings(BaseModel):
    """Default grid construction"""
    tail_width: confloat(gt=0) = 26.0
    resolution_1d: conint(ge=5) = 4097
    resolution_2d: conint(ge=5) = 257
    mass_fraction: confloat(gt=0, lt=1) = 1.0 - 1e-8
    tail_hessian: confloat(gt=0) = 1e-10


class KstabSettings(BaseModel):
    """Validated settings loaded from config/kstab.yaml"""
    grid: GridSettings = GridSettings()
    tolerances: ToleranceSettings = ToleranceSettings()
    t_max: confloat(gt=0) = 64.0
    time_base: confloat(gt=1) = 2.0
    newton_max_iter: conint(ge=10) = 200
    newton_tol: confloat(gt=0) = 1e-12
    scan_samples: conint(ge=1) = 200
    scan_pieces: conint(ge=2) = 3
    seed: int = 0
    threads: conint(ge=1) = 1
    run_log: Optional[str] = None


# --------------------------------------------------
# Helpers
# --------------------------------------------------

def json_pointer(error: ValidationError) -> str:
    """JSON pointer of the first failing field in a pydantic error"""
    first = error.errors()[0]
    location = "/".join(str(part) for part in first.get('loc', ()))
    return f"/{location}: {first.get('msg', 'invalid value')}"


def validate_model(model: type, data: Dict[str, Any], source: str = "input") -> BaseModel:
    """Validate a dict against a pydantic model, converting failures to KstabValidationError"""
    try:
        return model(**data)
    except ValidationError as e:
        message = f"{source} {json_pointer(e)}"
        logger.error(f"❌ Validation failed: {message}")
        raise KstabValidationError(message) from e
    except TypeError as e:
        raise KstabValidationError(f"{source}: expected a JSON object ({e})") from e


def load_json(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a JSON input file"""
    path = Path(path)
    if not path.exists():
        raise KstabValidationError(f"Input file not found: {path}")
    try:
        with open(path, 'r') as handle:
            data = json.load(handle)
    except json.JSONDecodeError as e:
        raise KstabValidationError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise KstabValidationError(f"{path}: expected a JSON object at the top level")
    return data


def validate_run_config(path: Union[str, Path]) -> RunConfig:
    """Load and validate a verification run configuration"""
    return validate_model(RunConfig, load_json(path), source=str(path))
