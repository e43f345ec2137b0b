#!/usr/bin/env python3
"""
Common utilities for the kstab command line
Settings loading, argument parsing, input loading and CSV/JSON output
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pandas as pd
import yaml

from input_validator import (KstabSettings, KstabValidationError, RunConfig, load_json, validate_model,
                             validate_run_config)
from polytope import MomentPolytope, parse_polytope
from potentials import POTENTIAL_CONFIG, LogGrid, default_grid
from rays import RAY_CONFIG
from slopes import SLOPE_CONFIG
from suites import REGISTRY, SuiteCase, suite_names
from testconfig import TestConfigPL, parse_testconfig

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

logger = logging.getLogger(__name__)

PACKAGE_ROOT = Path(__file__).resolve().parent
DEFAULT_SETTINGS = PACKAGE_ROOT / "config" / "kstab.yaml"
DEFAULT_RUN_CONFIG = PACKAGE_ROOT / "inputs" / "run_rational.json"
CSV_VERSION = "kstab-csv v1"
OUTPUT_FORMATS = ('csv', 'json')
FUNCTIONAL_CHOICES = ('E', 'J', 'EJ', 'entropy', 'mabuchi', 'deligne')

# --------------------------------------------------
# Settings
# --------------------------------------------------

def load_settings(path: Optional[Union[str, Path]] = None) -> KstabSettings:
    """
    Load config/kstab.yaml (or KSTAB_CONFIG, or an explicit path) into KstabSettings.

    KSTAB_THREADS overrides the thread hint.
    """
    path = Path(path or os.environ.get('KSTAB_CONFIG') or DEFAULT_SETTINGS)
    data: Dict[str, Any] = {}
    if path.exists():
        try:
            with open(path, 'r') as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise KstabValidationError(f"{path} is not valid YAML: {e}") from e
    else:
        logger.warning(f"⚠️ Settings file {path} not found, using built-in defaults")
    if os.environ.get('KSTAB_THREADS'):
        data['threads'] = os.environ['KSTAB_THREADS']
    settings = validate_model(KstabSettings, data, source=str(path))
    apply_settings(settings)
    return settings


def apply_settings(settings: KstabSettings) -> None:
    """Push settings into the module-level config dicts"""
    grid = settings.grid
    POTENTIAL_CONFIG.update({
        'tail_width': grid.tail_width,
        'resolution': {1: grid.resolution_1d, 2: grid.resolution_2d},
        'newton_max_iter': settings.newton_max_iter,
        'newton_tol': settings.newton_tol,
        'mass_fraction': grid.mass_fraction,
        'tail_hessian': grid.tail_hessian,
    })
    RAY_CONFIG['time_base'] = int(settings.time_base)
    tolerances = settings.tolerances
    SLOPE_CONFIG.update({
        'theoremB_tol': tolerances.theoremB,
        'theoremC_tol': tolerances.theoremC,
        'weak_tol': tolerances.weakC,
        'growth_tol': tolerances.growth,
    })


# --------------------------------------------------
# Argument Parsing
# --------------------------------------------------

class KstabArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with code 1"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _suite_lines() -> str:
    width = max(len(name) for name in REGISTRY)
    return "\n".join(f"  {name:<{width}}  {entry['meta']['description']}" for name, entry in REGISTRY.items())


def _common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group('global options')
    group.add_argument('--grid', metavar='GRID', help='Grid JSON file {"box": [[lo, hi], ...], "resolution": [N, ...]} '
                                                      'or a node count per axis')
    group.add_argument('--t-max', type=float, metavar='T', help='Largest ray time (default from settings)')
    group.add_argument('--tol', type=float, metavar='TOL', help='Tolerance override for verification rows')
    group.add_argument('--out', metavar='PATH', help='Output file (default: stdout)')
    group.add_argument('--format', choices=OUTPUT_FORMATS, help='Output format (default: from --out suffix, else csv)')
    group.add_argument('--seed', type=int, help='Random seed (default from settings)')
    group.add_argument('--threads', type=int, help='Worker threads; results are identical for any value')
    group.add_argument('--settings', metavar='YAML', help='Settings file (default: config/kstab.yaml or KSTAB_CONFIG)')
    group.add_argument('--verbose', action='store_true', help='Debug logging')
    return common


def create_argument_parser() -> argparse.ArgumentParser:
    """Create the kstab argument parser"""
    common = _common_arguments()
    parser = KstabArgumentParser(
        prog="kstab",
        description="kstab - toric Kähler energy functionals, geodesic rays and test-configuration invariants",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"""
Examples:
  kstab polytope --poly inputs/p1xp1.json                        # Volumes, Delzant check, Sbar
  kstab invariants --poly inputs/p1.json --tc inputs/step.json   # DF, M^NA, E^NA, J^NA
  kstab ray --tc inputs/step.json --t-max 16 --dump ray.bin      # E and J along the geodesic
  kstab slope --tc inputs/half_step.json --functional mabuchi    # Asymptotic slope of M
  kstab verify --suite twist                                     # Exact twist independence
  kstab verify --suite theoremB --config inputs/run_p1.json --out rows.csv
  kstab scan --poly inputs/f1.json --slopes inputs/lin.json --samples 200 --seed 7

Suites:
{_suite_lines()}

Global options (every command):
  --grid, --t-max, --tol, --out, --format, --seed, --threads, --settings, --verbose

Exit codes:
  0 all rows pass, 1 validation error, 2 tolerance or consistency failure
        """
    )
    commands = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=KstabArgumentParser)
    commands.required = True

    poly = commands.add_parser('polytope', parents=[common], help='Polytope report')
    poly.add_argument('--poly', required=True, help='Polytope JSON file')

    inv = commands.add_parser('invariants', parents=[common], help='Non-Archimedean invariants of a test configuration')
    inv.add_argument('--poly', help='Base polytope JSON (default: the base named in the test configuration)')
    inv.add_argument('--tc', required=True, help='Test configuration JSON file')
    inv.add_argument('--twist', help='Twist C > max f (rational strings allowed)')

    for name, help_text in (('ray', 'Functionals along a ray (functional, t, value, err)'),
                            ('slope', 'Asymptotic slopes along a ray against the invariants')):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.add_argument('--poly', help='Base polytope JSON (default: the base named in the test configuration)')
        sub.add_argument('--tc', required=True, help='Test configuration JSON file')
        sub.add_argument('--kind', choices=['geodesic', 'smooth'], default='geodesic', help='Ray construction')
        sub.add_argument('--functional', choices=FUNCTIONAL_CHOICES, default='EJ', help='Functional(s) to evaluate')
        sub.add_argument('--twist', help='Twist C for smooth rays')
        if name == 'ray':
            sub.add_argument('--dump', metavar='PATH', help='Binary dump of psi_t (JSON header line + float64 blocks)')

    verify = commands.add_parser('verify', parents=[common], help='Run a verification suite')
    verify.add_argument('--suite', required=True, choices=suite_names(), help='Suite name')
    verify.add_argument('--config', help='Run configuration JSON (default: inputs/run_rational.json)')

    scan = commands.add_parser('scan', parents=[common], help='K-semistability scan over PL candidates')
    scan.add_argument('--poly', required=True, help='Polytope JSON file')
    scan.add_argument('--slopes', required=True, help='Slope set JSON {"slopes": [[...], ...]}')
    scan.add_argument('--samples', type=int, help='Number of Sobol PL candidates (default from settings)')
    scan.add_argument('--pieces', type=int, help='Largest number of pieces per candidate (default from settings)')
    return parser


# --------------------------------------------------
# Inputs
# --------------------------------------------------

def load_polytope(path: Union[str, Path]) -> MomentPolytope:
    return parse_polytope(load_json(path))


def load_testconfig(path: Union[str, Path], base: Optional[MomentPolytope] = None) -> TestConfigPL:
    """Test configuration file; a string base inside it is resolved next to the file"""
    path = Path(path)
    return parse_testconfig(load_json(path), base=base, root=path.parent)


def resolve_grid(value: Optional[str], dim: int) -> Optional[LogGrid]:
    """--grid as a JSON file or a node count per axis; None keeps the configured default"""
    if value is None:
        return None
    if value.strip().isdigit():
        return default_grid(dim, resolution=int(value))
    grid = LogGrid.from_spec(load_json(value))
    if grid.dim != dim:
        raise KstabValidationError(f"Grid {value} has dimension {grid.dim}, expected {dim}")
    return grid


def load_cases(path: Union[str, Path]) -> Tuple[RunConfig, List[SuiteCase]]:
    """Run configuration and its cases; file references resolve next to the run file"""
    path = Path(path)
    config = validate_run_config(path)
    cases = []
    for case in config.cases:
        base = load_polytope(path.parent / case.poly)
        tc = load_testconfig(path.parent / case.tc, base=base)
        grid = LogGrid.from_spec(case.grid) if case.grid is not None else None
        cases.append(SuiteCase(case.name, tc, grid))
    logger.info(f"✅ Loaded {len(cases)} case(s) from {path}")
    return config, cases


def run_settings(settings: KstabSettings, run_config: RunConfig) -> KstabSettings:
    """Settings with the run configuration's tolerance overrides applied"""
    if not run_config.tolerances:
        return settings
    logger.info(f"📊 Run tolerances override {sorted(run_config.tolerances)}")
    tolerances = settings.tolerances.copy(update=run_config.tolerances)
    return settings.copy(update={'tolerances': tolerances})


# --------------------------------------------------
# Output
# --------------------------------------------------

def output_format(out: Optional[str], fmt: Optional[str]) -> str:
    if fmt:
        return fmt
    if out and Path(out).suffix.lower() == '.json':
        return 'json'
    return 'csv'


def render_table(frame: pd.DataFrame, fmt: str = 'csv') -> str:
    """CSV with the version comment line, or JSON carrying the same columns and rows"""
    if fmt == 'json':
        rows = json.loads(frame.to_json(orient='records', double_precision=15))
        return json.dumps({'format': CSV_VERSION, 'columns': list(frame.columns), 'rows': rows}, indent=2) + "\n"
    return f"# {CSV_VERSION}\n" + frame.to_csv(index=False, lineterminator="\n")


def write_table(frame: pd.DataFrame, out: Optional[str] = None, fmt: Optional[str] = None) -> str:
    """Write to --out or stdout; returns the rendered text"""
    text = render_table(frame, output_format(out, fmt))
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        logger.info(f"📊 Wrote {len(frame)} row(s) to {path}")
    else:
        sys.stdout.write(text)
    return text
