"""
tdh Stage Loader

Discovers stage classes in ``*_module.py`` files of the modules directory and
keeps a record of every file it could not turn into a stage.
"""

import importlib.util
import inspect
import os
import logging
from typing import Dict, List, Optional, Type
from base import BaseStage

logger = logging.getLogger(__name__)

STAGE_SUFFIX = "_module.py"


class StageLoader:
    """Discovers tdh stages and remembers which files were skipped and why"""

    def __init__(self, modules_dir: str = None):
        if modules_dir is None:
            modules_dir = os.path.dirname(os.path.abspath(__file__))
        self.modules_dir = modules_dir
        self._stages: Dict[str, Type[BaseStage]] = {}
        self.sources: Dict[str, str] = {}
        self.skipped: Dict[str, str] = {}

    def discover_stages(self) -> Dict[str, Type[BaseStage]]:
        """
        Load every valid stage found in the modules directory.

        A file is skipped, with its reason kept in ``skipped``, when it fails
        to import, holds no instantiable stage, or declares a stage name an
        earlier file already took.

        Returns:
            Dictionary mapping stage names to stage classes
        """
        self._stages.clear()
        self.sources.clear()
        self.skipped.clear()

        for filename in sorted(os.listdir(self.modules_dir)):
            if not filename.endswith(STAGE_SUFFIX):
                continue
            try:
                reason = self._load_stage(filename[:-3])
            except Exception as e:
                reason = f"import failed: {type(e).__name__}: {e}"
            if reason:
                self.skipped[filename] = reason
                logger.warning(f"Skipped stage file {filename}: {reason}")

        return self._stages.copy()

    def _load_stage(self, module_name: str) -> Optional[str]:
        """
        Import one file and register its first BaseStage subclass.

        Returns None on success, otherwise the reason the file was not used.
        """
        filename = f"{module_name}.py"
        spec = importlib.util.spec_from_file_location(module_name, os.path.join(self.modules_dir, filename))
        if spec is None or spec.loader is None:
            raise ImportError(f"Could not load spec for {module_name}")

        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)

        failures = []
        for name, obj in inspect.getmembers(module, inspect.isclass):
            if not issubclass(obj, BaseStage) or obj is BaseStage or inspect.isabstract(obj):
                continue
            try:
                instance = obj()
            except Exception as e:
                failures.append(f"{name}() raised {type(e).__name__}: {e}")
                continue
            if instance.name in self._stages:
                return f"stage name '{instance.name}' already provided by {self.sources[instance.name]}"
            self._stages[instance.name] = obj
            self.sources[instance.name] = filename
            logger.debug(f"Loaded stage: {instance.name} v{instance.version} from {filename}")
            return None

        return "; ".join(failures) if failures else "no BaseStage subclass"

    def get_stage(self, name: str) -> Optional[Type[BaseStage]]:
        return self._stages.get(name)

    def list_stages(self) -> List[str]:
        return list(self._stages.keys())

    def get_all_stages(self) -> Dict[str, Type[BaseStage]]:
        return self._stages.copy()


# Global loader instance
loader = StageLoader()

# Auto-discover stages on import
loader.discover_stages()
