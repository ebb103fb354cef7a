"""Recipe language: lexer, parser, and lazy evaluator."""

from .parser import parse
from .eval import EvalConfig, Evaluator, EvalTrace
from .jobs import Job, eval_job_set, job_display_name, parse_job_name

__all__ = [
    "parse",
    "EvalConfig",
    "Evaluator",
    "EvalTrace",
    "Job",
    "eval_job_set",
    "job_display_name",
    "parse_job_name",
]
