from typing import List

from mcp.types import Tool, TextContent

from ..eql_core import SolverSpec, default_grid
from ..errors import AbmEqlError
from ..harness import learn_to_dir
from ..lattice_abm import Trace
from .base import BaseTool

_SOLVERS = {"lstsq": "least_squares", "least_squares": "least_squares", "lasso": "lasso", "greedy": "greedy"}


class LearnEquationTool(BaseTool):
    def get_tool_definition(self) -> Tool:
        return Tool(
            name="learn_equation",
            description="Learn a sparse ODE right-hand side from a trace CSV with pruning and split voting",
            inputSchema={
                "type": "object",
                "properties": {
                    "dataPath": {"type": "string", "description": "Trace CSV (t,<species...>[,F],n_replicates)"},
                    "library": {"type": "string", "description": "Preset (poly4, sir, logistic, modified_logistic) "
                                                                 "or comma-separated terms"},
                    "solver": {"type": "string", "enum": sorted(_SOLVERS), "description": "Regression back-end"},
                    "lambda": {"type": "number", "description": "Fixed Lasso lambda (default: grid search)"},
                    "tol": {"type": "number", "description": "Greedy tolerance (default 1e-4)"},
                    "debias": {"type": "boolean", "description": "Refit the Lasso support by least squares "
                                                              "(default false)"},
                    "splits": {"type": "integer", "description": "Train/test splits (default 10)"},
                    "prunePct": {"type": "number", "description": "Pruning threshold in percent (default 5)"},
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
        solver = arguments.get("solver", "greedy")
        if solver not in _SOLVERS:
            raise ValueError(f"Unknown solver: {solver}")
        kind = _SOLVERS[solver]

        try:
            common = dict(
                n_splits=int(arguments.get("splits", 10)),
                prune_threshold=float(arguments.get("prunePct", 5.0)) / 100.0,
            )
            if kind == "greedy":
                spec = SolverSpec(kind=kind, tol=float(arguments.get("tol", 1e-4)), **common)
            elif kind == "lasso":
                lam = arguments.get("lambda")
                spec = SolverSpec(kind=kind, lam=None if lam is None else float(lam), grid=default_grid(),
                                  debias=bool(arguments.get("debias", False)), **common)
            else:
                spec = SolverSpec(kind=kind, **common)
            trace = Trace.from_csv(data_path)
            summary = await self.run_blocking(
                learn_to_dir, trace, arguments.get("library", "poly4"), spec,
                int(arguments.get("seed", 0)), self.output_dir(output_name),
            )
            return self.reply(summary)
        except AbmEqlError as e:
            raise Exception(f"Failed to learn equation: {str(e)}")
