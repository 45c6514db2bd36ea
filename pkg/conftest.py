"""Repository-level collection rules.

The core library's suite must run on its own: the plotting package under
``plots/`` is optional and separately installed, so its tests are skipped
entirely when ``curveplots`` is not importable.
"""

import importlib.util

collect_ignore_glob = []
if importlib.util.find_spec("curveplots") is None:
    collect_ignore_glob.append("plots/*")
