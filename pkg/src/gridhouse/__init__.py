"""Grid-house simulator and hierarchical question-answering agent."""

__version__ = "0.1.0"
