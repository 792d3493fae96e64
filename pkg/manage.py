#!/usr/bin/env python
"""Command-line entry point: `python manage.py <command> --help`."""
import sys


def main():
    """Run a pipeline command."""
    try:
        from cli.commands import app
    except ImportError as exc:
        raise ImportError(
            "Couldn't import the pipeline packages. Did you install requirements.txt "
            "and run from the repository root?"
        ) from exc
    app(prog_name="manage.py")


if __name__ == '__main__':
    sys.exit(main())
