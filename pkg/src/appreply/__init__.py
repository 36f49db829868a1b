"""Review-response synthesis from retrieved app snippets."""

__version__ = "0.1.0"
