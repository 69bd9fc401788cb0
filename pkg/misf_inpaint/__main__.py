"""
Invokable Module for CLI.

python -m misf_inpaint
"""

from misf_inpaint.cli.main import cli

if __name__ == "__main__":
    # Click injects a Context at runtime; silence static checkers about the missing ctx.
    cli()  # pylint: disable=no-value-for-parameter
