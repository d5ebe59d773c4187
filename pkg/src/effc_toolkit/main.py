"""
Main Application Entry Point
Fast fragmentation-coalescence toolkit
"""

import logging
import os
import sys

from .cli import configure_logging
from .cli import main as cli_main
from .config import load_environment

logger = logging.getLogger(__name__)


def main():
    """Main function to start the command line"""
    # Load environment variables
    load_environment()
    configure_logging("-v" in sys.argv[1:] or "--verbose" in sys.argv[1:])

    # stderr carries only the JSON error document unless logging is turned up
    if os.getenv("EFFC_THREADS") is None:
        logger.info("EFFC_THREADS not set. Replica runs will use every CPU core.")

    sys.exit(cli_main())


if __name__ == "__main__":
    main()
