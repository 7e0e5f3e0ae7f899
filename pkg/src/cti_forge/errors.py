"""Shared exception base for the package.

Every module defines its own specific exceptions; they all derive from
CtiForgeError so the CLI can map failures onto its exit-code table.
"""


class CtiForgeError(Exception):
    """Base class for all cti-forge errors."""
