import asyncio
import logging
import os
import sys
from pathlib import Path

from mcp.server.models import InitializationOptions
import mcp.types as types
from mcp.server import NotificationOptions, Server
import mcp.server.stdio

from abm_eql import __version__
from abm_eql.tools import get_all_tools, get_tool

logger = logging.getLogger(__name__)

server = Server("abm-eql")

# every tool writes below this directory
OUTPUT_ROOT = Path(os.getenv("ABM_EQL_OUTPUT_DIR", "./abm_eql_output"))

@server.list_tools()
async def handle_list_tools() -> list[types.Tool]:
    return get_all_tools()

@server.call_tool()
async def handle_call_tool(name: str, arguments: dict | None) -> list[types.TextContent]:
    try:
        tool = get_tool(name)
        tool.output_root = OUTPUT_ROOT
        return await tool.execute(arguments or {})
    except Exception as e:
        logger.warning("tool %s failed: %s", name, e)
        return [types.TextContent(
            type="text",
            text=f"Operation failed: {str(e)}",
            isError=True
        )]

async def main():
    # stdout carries the protocol; logs go to stderr
    logging.basicConfig(level=os.getenv("ABM_EQL_LOG_LEVEL", "WARNING").upper(), stream=sys.stderr)
    async with mcp.server.stdio.stdio_server() as (read_stream, write_stream):
        await server.run(
            read_stream,
            write_stream,
            InitializationOptions(
                server_name="abm-eql",
                server_version=__version__,
                capabilities=server.get_capabilities(
                    notification_options=NotificationOptions(),
                    experimental_capabilities={},
                ),
            ),
        )

def run():
    asyncio.run(main())

if __name__ == "__main__":
    run()
