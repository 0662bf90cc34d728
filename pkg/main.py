import logging
import sys

from config import COMPUTE_SETTINGS, GENERAL_SETTINGS, LOGGER_SETTINGS
from src.cli.commands import run


# Setup logging based on configurations
def setup_logging() -> None:
    logging.basicConfig(
        level=LOGGER_SETTINGS["log_level"],
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(LOGGER_SETTINGS["log_file_path"]),
            logging.StreamHandler(),
        ],
    )


def main(argv: list[str] | None = None) -> int:
    setup_logging()
    logger = logging.getLogger(__name__)
    if GENERAL_SETTINGS["debug_mode"]:
        logging.getLogger().setLevel(logging.DEBUG)
        logger.info("DEBUG_MODE is ENABLED.")

    settings = {**COMPUTE_SETTINGS, **GENERAL_SETTINGS}
    logger.debug(f"Runtime settings: {settings}")
    code = run(argv, settings)
    logger.info(f"Finished with exit code {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
