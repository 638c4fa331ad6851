import logging
import os
from logging.handlers import RotatingFileHandler

from dotenv import load_dotenv

from qchaos.config import get_env_config

# Load environment variables
load_dotenv()

env_config = get_env_config()

# Create logs directory if it doesn't exist
if not os.path.exists(env_config.LOG_DIR):
    os.makedirs(env_config.LOG_DIR)

# Configure logging
logging.basicConfig(
    handlers=[
        RotatingFileHandler(
            os.path.join(env_config.LOG_DIR, 'qchaos.log'),
            maxBytes=env_config.LOG_MAX_BYTES,
            backupCount=env_config.LOG_BACKUP_COUNT
        ),
        logging.StreamHandler()
    ],
    level=getattr(logging, env_config.LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

# numba's compiler is chatty at DEBUG
logging.getLogger('numba').setLevel(logging.WARNING)

from qchaos.cli import app  # noqa: E402

if __name__ == '__main__':
    app()
