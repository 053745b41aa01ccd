#!/usr/bin/env python3
# app.py - Command-line entry point for the polaron TCL2 simulator

import os
import sys
import logging

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from polaron_qrt.cli import cli, main
from polaron_qrt.config import config as config_classes
from polaron_qrt.config import get_config
from polaron_qrt.logging_config import setup_logging


def create_app(config_name=None):
    """Application factory: configuration and logging, returning the click command group"""

    # Load configuration
    if config_name is None:
        config_name = os.environ.get('POLARON_ENV', 'development')
    config_class = config_classes.get(config_name.lower()) or get_config()

    # Initialize logging first
    logger = setup_logging(
        log_level=getattr(logging, str(config_class.LOG_LEVEL).upper(), logging.INFO),
        enable_json=config_class.ENABLE_JSON_LOGGING,
        log_dir=config_class.LOG_DIR,
    )

    # Ensure output root exists
    if config_class.OUTPUT_ROOT:
        os.makedirs(config_class.OUTPUT_ROOT, exist_ok=True)

    logger.info(f"Application created successfully in {config_name} mode")
    return cli


if __name__ == '__main__':
    create_app()
    sys.exit(main())
