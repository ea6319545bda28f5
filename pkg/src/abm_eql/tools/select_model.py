from typing import List

from mcp.types import Tool, TextContent

from ..errors import AbmEqlError
from ..harness import select_to_dir
from ..lattice_abm import Trace
from .base import BaseTool


class SelectModelTool(BaseTool):
    def get_tool_definition(self) -> Tool:
        return Tool(
            name="select_model",
            description="Vote between the mean-field and correlation-modified logistic models over random splits",
            inputSchema={
                "type": "object",
                "properties": {
                    "dataPath": {"type": "string", "description": "BDM trace CSV with C (and F) columns"},
                    "corrPath": {"type": "string", "description": "Separate trace CSV holding F (optional)"},
                    "splits": {"type": "integer", "description": "Number of splits (default 100)"},
                    "seed": {"type": "integer", "description": "Split seed (default 0)"},
                    "outputName": {"type": "string", "description": "Directory name under the output root"},
                },
                "required": ["dataPath", "outputName"],
            },
        )

    async def execute(self, arguments: dict) -> List[TextContent]:
        data_path = arguments.get("dataPath")
        output_name = arguments.get("outputName")
        if not data_path:
            raise ValueError("dataPath is required")
        if not output_name:
            raise ValueError("outputName is required")

        try:
            c_trace = Trace.from_csv(data_path)
            corr_path = arguments.get("corrPath")
            f_trace = Trace.from_csv(corr_path) if corr_path else None
            summary = await self.run_blocking(
                select_to_dir, c_trace, f_trace, int(arguments.get("splits", 100)),
                int(arguments.get("seed", 0)), self.output_dir(output_name),
            )
            return self.reply(summary)
        except AbmEqlError as e:
            raise Exception(f"Failed to select model: {str(e)}")
