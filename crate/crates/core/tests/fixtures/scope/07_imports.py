import os
import os.path
import json as js
from collections import OrderedDict, defaultdict
from typing import List


def load(path: str) -> List:
    with open(os.path.join(path, "x")) as fh:
        return js.load(fh, object_pairs_hook=OrderedDict)
