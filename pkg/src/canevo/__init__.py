"""CAN response-time analysis, evolved schedulability tests and task allocation."""

__version__ = "0.1.0"

from .analysis import analyze_set, rta_closed_d, rta_closed_simple, rta_exact, rta_s1  # noqa: E402
from .formula import Formula, builtin, eval_formula, parse_formula  # noqa: E402
from .model import AnalysisConfig, Message, MessageSet, validate_message_set  # noqa: E402

__all__ = [
    "AnalysisConfig", "Formula", "Message", "MessageSet", "analyze_set", "builtin", "eval_formula",
    "parse_formula", "rta_closed_d", "rta_closed_simple", "rta_exact", "rta_s1", "validate_message_set",
]
