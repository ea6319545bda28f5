from typing import List

from mcp.types import Tool, TextContent

from ..config import BdmConfig, SirConfig, load_config
from ..errors import AbmEqlError
from ..harness import simulate_to_dir
from .base import BaseTool

_RATE_KEYS = {
    "bdm": ("pp", "pd", "pm", "size", "init_fraction", "t_end", "n_record"),
    "sir": ("pi", "pr", "pm", "size", "init_s_fraction", "init_i_fraction", "t_end", "n_record"),
}


class SimulateAbmTool(BaseTool):
    def get_tool_definition(self) -> Tool:
        return Tool(
            name="simulate_abm",
            description="Simulate a lattice ABM ensemble (BDM or SIR) and write the mean trace as CSV",
            inputSchema={
                "type": "object",
                "properties": {
                    "model": {"type": "string", "enum": ["bdm", "sir"], "description": "Which ABM to run"},
                    "parameters": {
                        "type": "object",
                        "description": "Config fields, e.g. {\"pp\": 0.01, \"pd\": 0.005, \"pm\": 1, \"size\": 60}",
                    },
                    "configPath": {"type": "string", "description": "key = value config file (instead of parameters)"},
                    "replicates": {"type": "integer", "description": "Number of replicates (default 1)"},
                    "seed": {"type": "integer", "description": "Master seed (default 0)"},
                    "correlation": {"type": "boolean", "description": "Record occupancy correlation F (BDM only)"},
                    "outputName": {"type": "string", "description": "Directory name under the output root"},
                },
                "required": ["model", "outputName"],
            },
        )

    async def execute(self, arguments: dict) -> List[TextContent]:
        model = arguments.get("model")
        output_name = arguments.get("outputName")
        if model not in ("bdm", "sir"):
            raise ValueError("model is required and must be 'bdm' or 'sir'")
        if not output_name:
            raise ValueError("outputName is required")
        params = arguments.get("parameters")
        config_path = arguments.get("configPath")
        if not params and not config_path:
            raise ValueError("either parameters or configPath is required")
        seed = int(arguments.get("seed", 0))
        replicates = int(arguments.get("replicates", 1))

        try:
            if config_path:
                config = load_config(config_path, model).with_seed(seed)
            else:
                unknown = set(params) - set(_RATE_KEYS[model])
                if unknown:
                    raise ValueError(f"unknown parameters for {model}: {sorted(unknown)}")
                cls = BdmConfig if model == "bdm" else SirConfig
                config = cls(**params, seed=seed)
            summary = await self.run_blocking(
                simulate_to_dir, config, replicates, seed, self.output_dir(output_name),
                correlation=bool(arguments.get("correlation", False)),
            )
            return self.reply(summary)
        except (AbmEqlError, TypeError) as e:
            raise Exception(f"Failed to simulate: {str(e)}")
