import logging
import sys

from colorama import Fore, Style, just_fix_windows_console

from src.errors import ParameterError

LEVEL_COLORS = {
    logging.DEBUG: Fore.WHITE,
    logging.INFO: Fore.CYAN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.RED + Style.BRIGHT,
}


def _use_color() -> bool:
    return hasattr(sys.stderr, "isatty") and sys.stderr.isatty()


def paint(text: str, color: str) -> str:
    return color + text + Style.RESET_ALL if _use_color() else text


class ColorFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return paint(super().format(record), LEVEL_COLORS.get(record.levelno, ""))


def setup_logging(level: str = "INFO") -> None:
    """
    Routes the package loggers to stderr with colored levels.
    Only the command line calls this; library code just logs.
    """
    if level.upper() not in logging.getLevelNamesMapping():
        raise ParameterError(f"Unknown log level '{level}'")
    just_fix_windows_console()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(ColorFormatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("src")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def headline(text: str) -> None:
    print(paint(f"--- {text} ---", Fore.CYAN + Style.BRIGHT), file=sys.stderr)


def failure(text: str) -> None:
    print(paint(text, Fore.RED), file=sys.stderr)
