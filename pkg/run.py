import logging
import sys

from dotenv import load_dotenv

# Load environment variables before the settings module reads them
load_dotenv()

from gcplan.cli import main  # noqa: E402
from gcplan.core.config import settings  # noqa: E402

# Configure logging
logging.basicConfig(
    level=settings.LOG_LEVEL,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)

if __name__ == "__main__":
    sys.exit(main())
