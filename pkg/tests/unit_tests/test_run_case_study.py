import asyncio
import json
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from abm_eql.tools.run_case_study import RunCaseStudyTool


class TestRunCaseStudyTool(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.tool = RunCaseStudyTool()
        self.tool.output_root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    @patch("abm_eql.tools.run_case_study.run_case_study")
    def test_execute(self, mock_run):
        """Test that the desk preset is built and its report summarised"""
        mock_run.return_value = {"study": "cs4", "table": "table.csv", "rows": [{}, {}], "figures": ["votes.svg"]}
        result = asyncio.run(self.tool.execute({"study": "cs4", "seed": 5, "outputName": "cs4"}))

        payload = json.loads(result[0].text)
        self.assertEqual(payload["rows"], 2)
        self.assertEqual(payload["outDir"], str(Path(self.tmp.name) / "cs4"))
        spec = mock_run.call_args.args[0]
        self.assertEqual((spec.id, spec.scale, spec.seed, spec.size), ("cs4", "desk", 5, 60))

    def test_unknown_study(self):
        with self.assertRaisesRegex(Exception, "Failed to run case study"):
            asyncio.run(self.tool.execute({"study": "cs9", "outputName": "x"}))

    def test_missing_arguments(self):
        with self.assertRaises(ValueError):
            asyncio.run(self.tool.execute({"outputName": "x"}))
        with self.assertRaises(ValueError):
            asyncio.run(self.tool.execute({"study": "cs1"}))


if __name__ == '__main__':
    unittest.main()
