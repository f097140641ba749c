import logging

import divae.version

logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = divae.version.__version__
