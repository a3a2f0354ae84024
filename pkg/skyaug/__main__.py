import logging
import os
import sys

from skyaug.cli import cmdline_main


def run_skyaug():
    SKYAUG_DEBUG = os.environ.get('SKYAUG_DEBUG', '0')
    _level = logging.DEBUG if SKYAUG_DEBUG == '1' else logging.INFO
    logging.basicConfig(format="%(levelname)s %(asctime)s - %(message)s", level=_level)
    sys.exit(cmdline_main())


if __name__ == "__main__":
    run_skyaug()
