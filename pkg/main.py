"""Entry point for serving run-matrix results over HTTP."""

import logging

import uvicorn
from src.config import settings

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)

if __name__ == "__main__":
    logging.getLogger(__name__).info(f"Serving results from {settings.get_output_dir()}")
    uvicorn.run(
        "src.api.app:app",
        host=settings.BACKEND_HOST,
        port=settings.BACKEND_PORT,
    )
