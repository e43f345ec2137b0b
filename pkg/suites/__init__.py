#!/usr/bin/env python3
"""
Verification suites package initializer.

Re-exports:
- REGISTRY: suite name -> builder and metadata
- get_suite_and_meta(name)
- SuiteCase, SuiteContext: inputs handed to every suite
"""

from .registry import REGISTRY, SuiteCase, SuiteContext, get_suite_and_meta, suite_names

__all__ = ["REGISTRY", "SuiteCase", "SuiteContext", "get_suite_and_meta", "suite_names"]
