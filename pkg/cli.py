import sys
from typing import Optional, Sequence

from src.app import create_parser
from src.utils.errors import LandUseError
from src.utils.logger import get_logger, set_log_level


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = create_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        set_log_level("DEBUG")
    elif args.quiet:
        set_log_level("WARNING")
    logger = get_logger("cli")
    try:
        return args.handler(args)
    except LandUseError as e:
        logger.debug("command %s failed", args.command, exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == '__main__':
    sys.exit(main())
