# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Command-line front end for the resin microstructure design pipeline."""
import argparse
import logging
import os
import sys
import traceback
from dataclasses import dataclass
from importlib import import_module
from typing import Callable, Sequence

from resindesign import BASE_DIR
from resindesign.config import Settings, load_settings
from resindesign.errors import ResinDesignError

logger = logging.getLogger(__name__)

LOG_FORMAT = "[%(asctime)s] [%(levelname)s] %(name)s: %(message)s"


@dataclass
class Context:
    """What a command gets: parsed arguments and loaded settings."""

    args: argparse.Namespace
    settings: Settings

    def seed(self, default: int) -> int:
        return default if self.args.seed is None else self.args.seed


Command = Callable[[Context], int | None]


def option(*flags, **kwargs):
    """Attach an argparse argument to a command."""

    def decorator(func):
        func.__dict__.setdefault("__options__", []).insert(0, (flags, kwargs))
        return func

    return decorator


def check(predicate: Callable[[Context], bool]):
    """Run `predicate` before the command; it raises when unmet."""

    def decorator(func):
        func.__dict__.setdefault("__checks__", []).insert(0, predicate)
        return func

    return decorator


def common_options(overrides_dest: str) -> argparse.ArgumentParser:
    """Options accepted before and after the subcommand name."""
    parser = argparse.ArgumentParser(
        add_help=False, argument_default=argparse.SUPPRESS
    )
    parser.add_argument("--config", help="TOML or JSON settings file")
    parser.add_argument(
        "--set",
        dest=overrides_dest,
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override one setting; repeatable",
    )
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


class CommandLine:
    """Registry of subcommands with shared options and error handling."""

    def __init__(self, prog: str, description: str):
        self.prog = prog
        self.description = description
        self.commands: dict[str, Command] = {}

    def command(self, name: str | None = None):
        def decorator(func: Command) -> Command:
            self.commands[name or func.__name__.replace("_", "-")] = func
            return func

        return decorator

    def parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog=self.prog,
            description=self.description,
            parents=[common_options("overrides")],
        )
        sub = parser.add_subparsers(dest="command", required=True)
        for name, func in sorted(self.commands.items()):
            doc = (func.__doc__ or "").strip().splitlines()
            p = sub.add_parser(
                name,
                help=doc[0] if doc else None,
                parents=[common_options("command_overrides")],
            )
            for flags, kwargs in func.__dict__.get("__options__", []):
                p.add_argument(*flags, **kwargs)
        return parser

    def parse(self, argv: Sequence[str] | None = None) -> argparse.Namespace:
        """Parse `argv`; shared options may sit on either side of the
        subcommand, and later values win."""
        args = self.parser().parse_args(argv)
        args.overrides = getattr(args, "overrides", []) + getattr(
            args, "command_overrides", []
        )
        for name, default in (
            ("config", None),
            ("seed", None),
            ("verbose", False),
        ):
            setattr(args, name, getattr(args, name, default))
        return args

    def on_command_error(self, ctx: Context, exception: Exception):
        """Report a failed command with its traceback."""
        logger.error("%s failed: %s", ctx.args.command, exception)
        traceback.print_exception(
            type(exception),
            exception,
            exception.__traceback__,
            file=sys.stderr,
        )

    def invoke(self, argv: Sequence[str] | None = None) -> int:
        args = self.parse(argv)
        setup_logging(args.verbose)
        func = self.commands[args.command]
        ctx = Context(args=args, settings=Settings())
        try:
            ctx.settings = load_settings(args.config, args.overrides)
            for predicate in func.__dict__.get("__checks__", []):
                predicate(ctx)
            failed = func(ctx)
        except ResinDesignError as e:
            self.on_command_error(ctx, e)
            return 1
        except Exception as e:
            self.on_command_error(ctx, e)
            return 2
        return 1 if failed else 0


cli = CommandLine(
    prog="resindesign",
    description="Inverse design of resin microstructures by stiffness.",
)


def setup_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        force=True,
    )


def load_commands():
    """Import every module in resindesign.commands so it registers."""
    for module in sorted(os.listdir(BASE_DIR / "resindesign" / "commands")):
        if module.endswith(".py") and module != "__init__.py":
            import_module(f"resindesign.commands.{module[:-3]}")


def main(argv: Sequence[str] | None = None) -> int:
    load_commands()
    return cli.invoke(argv)
