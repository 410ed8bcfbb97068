"""
Main entry point for the corticast command line
"""

import logging
import sys
from typing import Iterable, Optional

from corticast.cli.cli import parse_args
from corticast.core.config import settings
from corticast.core.errors import CorticastError
from corticast.schemas.reports import ErrorResponse

logger = logging.getLogger(__name__)


def configure_logging(level: Optional[str] = None) -> None:
    """Configure logging on stderr; stdout carries command results"""
    logging.basicConfig(
        level=getattr(logging, (level or settings.LOG_LEVEL).upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
        force=True,
    )


def _report_error(error_code: str, message: str, details: Optional[dict]) -> None:
    response = ErrorResponse(error_code=error_code, error_message=message, details=details or None)
    sys.stderr.write(response.model_dump_json() + "\n")


def main(argv: Optional[Iterable[str]] = None) -> int:
    """Run one command and return its exit code (0 ok, 2 usage, 3 data, 4 metadata, 5 numeric)"""
    args = parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except CorticastError as exc:
        logger.error(f"{exc.error_code}: {exc}")
        _report_error(exc.error_code, str(exc), exc.details)
        return exc.exit_code
    except Exception as exc:
        logger.error(f"Unexpected error: {exc}", exc_info=True)
        _report_error("INTERNAL_ERROR", "An unexpected error occurred", {"type": type(exc).__name__})
        return 1


if __name__ == "__main__":
    sys.exit(main())
