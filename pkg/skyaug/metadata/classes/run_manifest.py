import json
import logging
import os

from skyaug.metadata.classes.base import BaseMetadata
from skyaug.utils.file import check_file_exists


def _library_version():
    from skyaug import __version__

    return __version__


class RunManifest(BaseMetadata):
    """
    Reproducibility record of a pipeline run.

    Holds the config snapshot, the seeds, and one record per finished stage with
    the sha256 of its inputs and outputs, the config values it depends on and its
    wall time.
    """

    def __init__(self, config: dict):
        super().__init__(config)

        self.metadata_type = "run_manifest"
        self.library_version = _library_version()
        self.seeds = {k: v for k, v in config.items() if k.endswith("_seed")}
        self.stages = {}

    @classmethod
    def from_json(cls, path):
        check_file_exists(path)
        with open(path, "r") as f:
            data = json.load(f)
        manifest = cls(data.get("args", {}))
        manifest.stages = data.get("stages", {})
        return manifest

    @classmethod
    def load_or_create(cls, path, config: dict):
        if os.path.exists(path):
            manifest = cls.from_json(path)
        else:
            manifest = cls(config)
        manifest.args = config
        manifest.seeds = {k: v for k, v in config.items() if k.endswith("_seed")}
        manifest.library_version = _library_version()
        return manifest

    def is_fresh(self, name, input_hashes: dict, config_values: dict, output_hashes: dict) -> bool:
        """True if `name` already ran with these inputs/config and its outputs are intact."""
        record = self.stages.get(name)
        if record is None:
            return False
        if record["inputs"] != input_hashes or record["config"] != config_values:
            logging.debug(f"Stage {name}: inputs or configuration changed")
            return False
        if record["outputs"] != output_hashes:
            logging.debug(f"Stage {name}: outputs are missing or were modified")
            return False
        return True

    def record_stage(self, name, input_hashes: dict, config_values: dict, output_hashes: dict, wall_time: float):
        self.stages[name] = {
            "inputs": input_hashes,
            "config": config_values,
            "outputs": output_hashes,
            "wall_time_s": round(wall_time, 3),
        }
