"""Module entry point for `python -m moviemat`."""

from .cli import entrypoint

if __name__ == "__main__":
    entrypoint()
