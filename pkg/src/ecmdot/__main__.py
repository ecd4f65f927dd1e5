"""Allow ``python -m ecmdot`` as an alternative to the console script."""

from .cli import entry

entry()
