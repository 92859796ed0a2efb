"""Offline administration: manage the user file and the material repository.

Operates directly on the data directory; run it while the server is down
(the server reads users and repo index at startup only, so edits made while
it runs are not picked up until restart).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from eteach.server.store import DuplicateUser, Repo, add_user, load_users

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _cmd_add_user(args: argparse.Namespace) -> int:
    try:
        add_user(Path(args.users), args.username, args.password, args.role,
                 args.display_name or args.username)
    except DuplicateUser:
        print(f"error: DUPLICATE_USER: {args.username!r} already exists",
              file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"added {args.role} {args.username!r} to {args.users}")
    return EXIT_OK


def _cmd_upload(args: argparse.Namespace) -> int:
    if not args.images:
        print("error: EMPTY_MATERIAL: a material needs at least one page",
              file=sys.stderr)
        return EXIT_DOMAIN
    pages = []
    for path in args.images:
        try:
            pages.append(Path(path).read_bytes())
        except OSError as exc:
            print(f"error: cannot read {path}: {exc}", file=sys.stderr)
            return EXIT_USAGE
    try:
        repo = Repo(Path(args.repo_dir))
        rec = repo.store_material(args.name, args.owner, pages)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(rec.to_json(), indent=2))
    return EXIT_OK


def _cmd_list(args: argparse.Namespace) -> int:
    try:
        repo = Repo(Path(args.repo_dir))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    materials = repo.list()
    if not materials:
        print("(no materials)")
        return EXIT_OK
    for rec in materials:
        print(f"{rec.material_id}  {rec.name!r}  owner={rec.owner}  "
              f"pages={rec.page_count}  bytes={sum(rec.sizes)}")
    return EXIT_OK


def _cmd_users(args: argparse.Namespace) -> int:
    try:
        users = load_users(Path(args.users))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not users:
        print("(no users)")
        return EXIT_OK
    for rec in sorted(users.values(), key=lambda r: r.username):
        print(f"{rec.username}  role={rec.role}  display={rec.display_name!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eteach-admin",
        description="Manage users and the material repository on disk.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("add-user", help="register a user")
    p.add_argument("--users", required=True, help="path to users.json")
    p.add_argument("username")
    p.add_argument("password")
    p.add_argument("role", choices=("teacher", "student"))
    p.add_argument("--display-name", default="")
    p.set_defaults(func=_cmd_add_user)

    p = sub.add_parser("upload", help="store page images as a material")
    p.add_argument("--repo-dir", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--owner", default="admin")
    p.add_argument("images", nargs="*", metavar="IMAGE")
    p.set_defaults(func=_cmd_upload)

    p = sub.add_parser("list", help="list stored materials")
    p.add_argument("--repo-dir", required=True)
    p.set_defaults(func=_cmd_list)

    p = sub.add_parser("users", help="list registered users")
    p.add_argument("--users", required=True, help="path to users.json")
    p.set_defaults(func=_cmd_users)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
