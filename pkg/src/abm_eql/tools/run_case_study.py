from typing import List

from mcp.types import Tool, TextContent

from ..errors import AbmEqlError
from ..harness import CASE_STUDIES, case_study_spec, run_case_study
from .base import BaseTool


class RunCaseStudyTool(BaseTool):
    def get_tool_definition(self) -> Tool:
        return Tool(
            name="run_case_study",
            description="Run a case study end to end and write tables, models, traces and SVG figures",
            inputSchema={
                "type": "object",
                "properties": {
                    "study": {"type": "string", "enum": list(CASE_STUDIES), "description": "Case study id"},
                    "scale": {"type": "string", "enum": ["paper", "desk"], "description": "Lattice scale"},
                    "seed": {"type": "integer", "description": "Master seed (default 0)"},
                    "outputName": {"type": "string", "description": "Directory name under the output root"},
                },
                "required": ["study", "outputName"],
            },
        )

    async def execute(self, arguments: dict) -> List[TextContent]:
        study = arguments.get("study")
        output_name = arguments.get("outputName")
        if not study:
            raise ValueError("study is required")
        if not output_name:
            raise ValueError("outputName is required")

        try:
            spec = case_study_spec(study, self.output_dir(output_name), scale=arguments.get("scale", "desk"),
                                   seed=int(arguments.get("seed", 0)))
            report = await self.run_blocking(run_case_study, spec)
            return self.reply({
                "study": report["study"],
                "outDir": str(spec.out_dir),
                "table": report["table"],
                "rows": len(report["rows"]),
                "figures": report["figures"],
            })
        except AbmEqlError as e:
            raise Exception(f"Failed to run case study: {str(e)}")
