import sys
import os

from rich.console import Console
from rich.markup import escape

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from shared.config import LOG_LEVEL, ENABLE_DEBUG_LOGGING

LEVELS = {'debug': 10, 'info': 20, 'warning': 30, 'error': 40}
STYLES = {'debug': 'dim', 'info': 'cyan', 'warning': 'yellow', 'error': 'bold red'}

console = Console(stderr=True, highlight=False)

_threshold = LEVELS['debug'] if ENABLE_DEBUG_LOGGING else LEVELS.get(LOG_LEVEL.lower(), 20)


def set_level(level):
    global _threshold
    _threshold = LEVELS.get(str(level).lower(), _threshold)


def log(tag, message, level='info'):
    """Print one `[TAG] message` line, e.g. log('TRAIN', 'epoch 3 loss 0.41')."""
    if LEVELS.get(level, 20) < _threshold:
        return
    label = tag if level in ('info', 'debug') else f"{tag} {level.upper()}"
    console.print(f"[{STYLES.get(level, 'cyan')}]\\[{escape(label)}][/] {escape(str(message))}")
