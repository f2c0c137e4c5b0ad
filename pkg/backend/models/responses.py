from dataclasses import dataclass, field
from typing import Any, Dict


EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_RUNTIME_ERROR = 3


@dataclass
class ToolkitResponse:
    text: str
    data: Dict[str, Any] = field(default_factory=dict)
    success: bool = True
    exit_code: int = EXIT_OK

    @classmethod
    def input_error(cls, text: str) -> "ToolkitResponse":
        return cls(text=text, success=False, exit_code=EXIT_INPUT_ERROR)

    @classmethod
    def runtime_error(cls, text: str) -> "ToolkitResponse":
        return cls(text=text, success=False, exit_code=EXIT_RUNTIME_ERROR)
