"""Allow ``python -m segdecide``."""

from .cli import main

main()
