import logging
import time
from contextlib import contextmanager
from typing import Dict, Iterator, Optional

from rich.console import Console
from rich.logging import RichHandler

from config import settings

console = Console(stderr=True)

_configured = False


def configure_logging(level: Optional[str] = None) -> None:
    """Install a single rich handler on the root logger (idempotent)."""
    global _configured
    level = (level or settings.LOG_LEVEL).upper()
    root = logging.getLogger()
    if not _configured:
        handler = RichHandler(console=console, show_path=False, rich_tracebacks=False)
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        root.addHandler(handler)
        _configured = True
    root.setLevel(level)


@contextmanager
def timed() -> Iterator[Dict[str, float]]:
    """Yields a dict that receives `wall_seconds` and `latency_ms` on exit."""
    out: Dict[str, float] = {}
    start = time.perf_counter()
    try:
        yield out
    finally:
        elapsed = time.perf_counter() - start
        out["wall_seconds"] = elapsed
        out["latency_ms"] = int(elapsed * 1000)
