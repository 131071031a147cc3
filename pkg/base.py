"""
tdh Stage Base Class

Every CLI command is backed by one stage. Stages never raise: failures are
reported through the ``success`` flag and ``summary["error"]``.
"""

import time
from abc import ABC, abstractmethod
from typing import Any, Dict, List


class BaseStage(ABC):
    """
    Abstract base class for all tdh stages.

    The result dict has the keys module, version, target, start_time,
    end_time, success, summary, artifacts and raw.
    """

    @property
    @abstractmethod
    def name(self) -> str:
        """Stage name, also the CLI command it backs"""
        pass

    @property
    @abstractmethod
    def version(self) -> str:
        pass

    @abstractmethod
    def run(self, config, outdir: str, **kwargs) -> Dict[str, Any]:
        """
        Execute the stage.

        Args:
            config: RunConfig for this run
            outdir: Output directory for artifacts
            **kwargs: Stage-specific options

        Returns:
            Dict with the standard stage result structure
        """
        pass

    def _result(self, target: str, start_time: float, success: bool, summary: Dict[str, Any],
                artifacts: List[str], raw: Any = None) -> Dict[str, Any]:
        return {
            "module": self.name,
            "version": self.version,
            "target": target,
            "start_time": start_time,
            "end_time": time.time(),
            "success": success,
            "summary": summary,
            "artifacts": artifacts,
            "raw": raw
        }
