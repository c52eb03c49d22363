"""Scenario files: parsing, printing and elaboration into runnable scenarios."""

from .expr import ExprError, compile_expr
from .loader import elaborate, load_file, load_text
from .parser import parse, tokenize
from .printer import print_expr, print_scenario, print_type
from .syntax import Diagnostic, Loc, ScenarioError, ScenarioFile

__all__ = [
    "Diagnostic",
    "ExprError",
    "Loc",
    "ScenarioError",
    "ScenarioFile",
    "compile_expr",
    "elaborate",
    "load_file",
    "load_text",
    "parse",
    "print_expr",
    "print_scenario",
    "print_type",
    "tokenize",
]
