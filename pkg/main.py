#!/usr/bin/env python3
"""
Main entry point for the Navier-Stokes-alpha solver suite
"""

import logging
import sys

from config import Config

# Set up logging
logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO),
    format=Config.LOG_FORMAT,
    handlers=[
        logging.StreamHandler(),  # Console output
        logging.FileHandler(Config.LOG_FILE)  # File output
    ]
)

# Set specific loggers to appropriate levels
logging.getLogger('numexpr').setLevel(logging.WARNING)
logging.getLogger('matplotlib').setLevel(logging.WARNING)

logger = logging.getLogger(__name__)


def main():
    try:
        Config.validate()
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        sys.exit(1)

    from cli_runner import app

    logger.debug(f"Runtime configuration: {Config.get_runtime_config()}")
    try:
        app()
    except KeyboardInterrupt:
        logger.info("Received keyboard interrupt, shutting down...")
        sys.exit(130)


if __name__ == "__main__":
    main()
