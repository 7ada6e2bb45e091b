"""
main.py: entry point. Keep this tiny.
"""
import sys

from lqdim.core.config import get_settings
from lqdim.core.logger import setup_logging

# Initialise logging before anything else is imported
_settings = get_settings()
setup_logging(
    log_level=_settings.log_level,   # from .env LQDIM_LOG_LEVEL, default "INFO"
    log_dir=_settings.log_dir,
    enable_file_log=_settings.log_to_file,
)

from lqdim.ui.cli import main  # noqa: E402 (import after logging setup)

sys.exit(main())
