import logging
import sys
from functools import wraps
from typing import Callable

from django.core.management.base import CommandError

from .errors import EXIT_RUNTIME, EXIT_VALIDATION, AppError

logger = logging.getLogger(__name__)


def handle_command_errors(error_message: str = "Command failed"):
    """Decorator mapping AppError to CommandError with the error's exit status."""
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(command, *args, **options):
            try:
                return func(command, *args, **options)
            except CommandError:
                raise
            except AppError as e:
                details = f" ({e.details})" if e.details else ""
                raise CommandError(f"{e.message}{details}", returncode=e.status) from e
            except Exception as exc:
                logger.exception("Failed in %s", func.__qualname__)
                raise CommandError(f"{error_message}: {exc}", returncode=EXIT_RUNTIME) from exc
        return wrapper
    return decorator


def validation_exit(parser, message: str) -> None:
    # argparse exits 2 on bad flags; usage errors are validation failures here
    if getattr(parser, "called_from_command_line", False):
        parser.print_usage(sys.stderr)
        parser.exit(EXIT_VALIDATION, f"{parser.prog}: error: {message}\n")
    raise CommandError(f"Error: {message}", returncode=EXIT_VALIDATION)


def parse_csv(text: str, item: Callable = str) -> list:
    try:
        return [item(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise CommandError(f"invalid list {text!r}: {exc}", returncode=EXIT_VALIDATION) from exc
