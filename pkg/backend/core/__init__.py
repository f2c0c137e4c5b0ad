# Core package
from .mtree_assistant import MTreeAssistant

__all__ = ['MTreeAssistant']
