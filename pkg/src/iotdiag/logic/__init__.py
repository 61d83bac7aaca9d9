"""Rule-language frontend and stratified evaluator."""
from .syntax import (
    Atom,
    Choice,
    Comparison,
    Literal,
    ParseError,
    Program,
    RangeBinding,
    RequirementMeta,
    Rule,
    Var,
    format_program,
    format_term,
    parse_atoms,
    parse_fact_statements,
    parse_program,
)
from .solver import (
    GroundingLimitError,
    GroundProgram,
    SatResult,
    Violation,
    check_satisfiable,
    exclude,
    ground,
    least_model,
    solve,
)

__all__ = [
    "Atom", "Choice", "Comparison", "Literal", "ParseError", "Program", "RangeBinding",
    "RequirementMeta", "Rule", "Var", "format_program", "format_term", "parse_atoms", "parse_fact_statements",
    "parse_program", "GroundingLimitError", "GroundProgram", "SatResult", "Violation",
    "check_satisfiable", "exclude", "ground", "least_model", "solve",
]
