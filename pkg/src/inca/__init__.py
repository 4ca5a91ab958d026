"""In-network identification of GTP-U user traffic and SRv6 service chaining."""

from importlib.resources import files

__version__ = "0.1.0"


def bundled(name: str) -> str:
    """Text of a bundled PoC fixture (``poc.topo``, ``poc.rules``, ``poc.scenario.json``)."""
    return (files(__name__) / "data" / name).read_text(encoding="utf-8")


def bundled_path(name: str) -> str:
    return str(files(__name__) / "data" / name)
