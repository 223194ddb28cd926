"""Run the service: python -m lm_service --config service.json"""

import argparse

import uvicorn

from .app import create_app
from .config import ServiceConfig


def main() -> None:
    parser = argparse.ArgumentParser(prog="lm_service")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=None)
    args = parser.parse_args()
    config = ServiceConfig.from_file(args.config) if args.config \
        else ServiceConfig.from_env()
    app = create_app(config)
    uvicorn.run(app, host=args.host, port=args.port or config.port,
                log_level="warning")


if __name__ == "__main__":
    main()
