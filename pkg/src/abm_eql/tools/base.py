import asyncio
import json
import re
from abc import ABC, abstractmethod
from pathlib import Path
from typing import List, Optional

from mcp.types import Tool, TextContent

_NAME = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


class BaseTool(ABC):
    def __init__(self):
        self.output_root: Optional[Path] = None

    @abstractmethod
    def get_tool_definition(self) -> Tool:
        """Return tool metadata."""
        pass

    @abstractmethod
    async def execute(self, arguments: dict) -> List[TextContent]:
        """Execute tool with given arguments."""
        pass

    def output_dir(self, name: str) -> Path:
        """Directory for a run's artifacts under the server's output root."""
        if self.output_root is None:
            raise ValueError("output root is not configured")
        if not _NAME.match(name):
            raise ValueError(f"outputName must be a plain directory name, got {name!r}")
        return Path(self.output_root) / name

    async def run_blocking(self, func, *args, **kwargs):
        """Run CPU-bound work off the event loop."""
        return await asyncio.to_thread(func, *args, **kwargs)

    @staticmethod
    def reply(payload: dict) -> List[TextContent]:
        return [TextContent(type="text", text=json.dumps(payload, indent=2, default=str))]
