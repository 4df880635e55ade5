"""Interactive story chat for children.

Three reply generators (topic retrieval, a small seq2seq responder, and a
template poetry maker) each propose a candidate every turn; a Q-table
learned from dialogue corpora, fused with hand-coded lexical block/boost
rules, picks the reply. Served over HTTP/WebSocket with a line REPL and
training commands in the CLI.
"""

__version__ = "0.1.0"

from .dialogue import DialogueState, Proposal, Source, Speaker, Turn, window

__all__ = [
    "DialogueState",
    "Proposal",
    "Source",
    "Speaker",
    "Turn",
    "window",
    "__version__",
]
