"""Shared exception base for the materia package."""


class MateriaError(Exception):
    """Base class for all materia-specific failures."""
