from .base import BaseTool
from .simulate_abm import SimulateAbmTool
from .learn_equation import LearnEquationTool
from .select_model import SelectModelTool
from .run_case_study import RunCaseStudyTool

_TOOLS = {
    'simulate_abm': SimulateAbmTool(),
    'learn_equation': LearnEquationTool(),
    'select_model': SelectModelTool(),
    'run_case_study': RunCaseStudyTool(),
}

def get_all_tools():
    return [tool.get_tool_definition() for tool in _TOOLS.values()]

def get_tool(name: str) -> BaseTool:
    if name not in _TOOLS:
        raise ValueError(f"Unknown tool: {name}")
    return _TOOLS[name]
