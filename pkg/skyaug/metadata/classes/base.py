import copy
import json
import sys
from pathlib import Path

import numpy as np

from skyaug.utils.file import check_directory_exists


def to_json_value(data):
    """Convert nested metadata (objects, dicts, sequences, numpy scalars, paths) into JSON-ready values."""
    if isinstance(data, dict):
        return {str(k): to_json_value(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [to_json_value(v) for v in data]
    if isinstance(data, np.generic):
        return data.item()
    if isinstance(data, np.ndarray):
        raise TypeError("Arrays are not stored in metadata files; write them as artifacts")
    if isinstance(data, Path):
        return data.as_posix()
    if hasattr(data, "__dict__"):
        return to_json_value(vars(data))
    return data


class BaseMetadata:
    def __init__(self, args):
        self.metadata_type = None
        self.cmdline = " ".join(sys.argv)
        self.args = args

    def copy(self):
        return copy.deepcopy(self)

    def get_dict(self) -> dict:
        """The metadata object and its attributes as a JSON-ready dictionary."""
        return to_json_value(self.copy())

    def save_json(self, path):
        """
        Write the metadata as indented JSON with sorted keys.

        Raises:
            FileNotFoundError: If the directory of `path` does not exist.
        """
        if not check_directory_exists(path):
            raise FileNotFoundError(f"A directory for {path} does not exist")

        with open(path, "w") as outfile:
            json.dump(self.get_dict(), outfile, indent=4, sort_keys=True)
            outfile.write("\n")
