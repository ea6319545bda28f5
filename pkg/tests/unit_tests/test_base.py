import asyncio
import json
import unittest
from pathlib import Path

from mcp.types import TextContent

from abm_eql.tools.base import BaseTool


class MockBaseTool(BaseTool):
    """Mock implementation of BaseTool for testing"""
    async def execute(self, arguments):
        result = await self.run_blocking(sum, arguments["values"])
        return self.reply({"sum": result})

    def get_tool_definition(self):
        return {
            "name": "mock_tool",
            "description": "Mock tool for testing"
        }


class TestBaseTool(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self.tool = MockBaseTool()
        self.tool.output_root = Path("/tmp/abm-eql-test")

    def test_output_dir(self):
        self.assertEqual(self.tool.output_dir("run_1"), Path("/tmp/abm-eql-test/run_1"))

    def test_output_dir_rejects_paths(self):
        for name in ("../escape", "a/b", "", ".hidden"):
            with self.assertRaises(ValueError):
                self.tool.output_dir(name)

    def test_output_root_required(self):
        with self.assertRaises(ValueError):
            MockBaseTool().output_dir("run")

    def test_reply_is_json_text(self):
        result = asyncio.run(self.tool.execute({"values": [1, 2, 3]}))
        self.assertIsInstance(result[0], TextContent)
        self.assertEqual(json.loads(result[0].text), {"sum": 6})


if __name__ == '__main__':
    unittest.main()
