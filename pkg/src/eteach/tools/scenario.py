"""Scenario files: the scripted-classroom model and its validator.

A scenario is a JSON document seeding a roster and materials, scripting
timed steps per actor, arming faults, and naming the checks to run after
quiescence.  Step "at" offsets are in seconds and are multiplied by the
time-scale factor, as are the server's idle/sweep/expiry timers; durations
of cursor_walk and audio_burst are wall-clock and stay unscaled, because
the 1 Hz cursor cadence is a fixed protocol property, not scenario time.

`python3 -m eteach.tools.scenario <out.json>` regenerates the bundled
experiment scenario: one teacher and thirty students, each called one by
one into a ten-second teaching session.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

ACTIONS = frozenset((
    "login", "chat", "activity", "invite", "accept", "set_page",
    "cursor_walk", "audio_burst", "end", "disconnect", "wait",
))
FAULT_KINDS = frozenset((
    "data_manager_fault", "client_disconnect", "chunk_corruption", "peer_stall",
))
CHECKS = frozenset((
    "public_chat", "sessions_completed", "cursor_received", "audio_received",
    "audio_monotonic", "audio_gaps", "errored", "no_errored", "session_ended",
    "page_converged", "page_ready", "material_frames",
))


class ScenarioInvalid(Exception):
    pass


@dataclass
class Step:
    at: float
    actor: str
    action: str
    params: dict = field(default_factory=dict)


@dataclass
class FaultSpec:
    kind: str
    at: float
    target: str | None = None
    duration: float = 0.0


@dataclass
class Assertion:
    name: str
    check: str
    params: dict = field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    config: dict
    teachers: list[dict]
    students: list[dict]
    materials: list[dict]
    steps: list[Step]
    faults: list[FaultSpec]
    assertions: list[Assertion]

    @property
    def actors(self) -> dict[str, str]:
        roster = {u["username"]: "teacher" for u in self.teachers}
        roster.update({u["username"]: "student" for u in self.students})
        return roster


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ScenarioInvalid(message)


def parse_scenario(doc: dict) -> Scenario:
    _require(isinstance(doc, dict), "scenario must be a JSON object")
    roster = doc.get("roster", {})
    teachers = roster.get("teachers", [])
    students = roster.get("students", [])
    _require(teachers or students, "roster is empty")
    for user in teachers + students:
        _require(isinstance(user.get("username"), str) and user["username"],
                 "roster entries need a username")
        user.setdefault("password", "pw")
        user.setdefault("display_name", user["username"])
    names = [u["username"] for u in teachers + students]
    _require(len(set(names)) == len(names), "duplicate usernames in roster")

    materials = doc.get("materials", [])
    for mat in materials:
        _require(isinstance(mat.get("name"), str), "materials need a name")
        _require(isinstance(mat.get("pages"), list) and mat["pages"],
                 f"material {mat.get('name')} needs at least one page")
        for page in mat["pages"]:
            _require(int(page.get("size", -1)) >= 0, "page sizes must be >= 0")

    steps = []
    last_at: dict[str, float] = {}
    for i, raw in enumerate(doc.get("steps", [])):
        at = float(raw.get("at", 0.0))
        actor = raw.get("actor")
        action = raw.get("action")
        _require(actor in names, f"step {i}: unknown actor {actor!r}")
        _require(action in ACTIONS, f"step {i}: unknown action {action!r}")
        _require(at >= last_at.get(actor, 0.0),
                 f"step {i}: 'at' decreases for actor {actor}")
        last_at[actor] = at
        params = {k: v for k, v in raw.items() if k not in ("at", "actor", "action")}
        steps.append(Step(at, actor, action, params))

    faults = []
    for i, raw in enumerate(doc.get("faults", [])):
        kind = raw.get("kind")
        _require(kind in FAULT_KINDS, f"fault {i}: unknown kind {kind!r}")
        target = raw.get("target")
        if kind != "data_manager_fault":
            _require(target in names, f"fault {i}: unknown target {target!r}")
        faults.append(FaultSpec(kind, float(raw.get("at", 0.0)), target,
                                float(raw.get("duration", 0.0))))

    assertions = []
    for i, raw in enumerate(doc.get("assertions", [])):
        check = raw.get("check")
        _require(check in CHECKS, f"assertion {i}: unknown check {check!r}")
        name = raw.get("name", f"{check}_{i}")
        params = {k: v for k, v in raw.items() if k not in ("name", "check")}
        for key in ("actor", "teacher", "student"):
            if key in params and params[key] != "*":
                _require(params[key] in names,
                         f"assertion {name}: unknown {key} {params[key]!r}")
        assertions.append(Assertion(name, check, params))

    return Scenario(
        name=doc.get("name", "unnamed"),
        config=doc.get("config", {}),
        teachers=teachers,
        students=students,
        materials=materials,
        steps=steps,
        faults=faults,
        assertions=assertions,
    )


def load_scenario(path: Path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioInvalid(f"cannot read scenario: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioInvalid(f"scenario is not valid JSON: {exc}") from None
    return parse_scenario(doc)


def experiment_scenario(students: int = 30, session_secs: float = 10.0) -> dict:
    """The classroom experiment at desk scale: students join, chat on the
    public board, then each is called one by one into a session with shared
    pages, both cursors live, and voice both ways."""
    teacher = "cikgu"
    roster_students = [f"s{i:02d}" for i in range(1, students + 1)]
    steps: list[dict] = [
        {"at": 0.0, "actor": teacher, "action": "login"},
    ]
    for i, name in enumerate(roster_students):
        steps.append({"at": round(0.2 + i * 0.12, 3), "actor": name, "action": "login"})
    # The chat wave starts only after the last login so every client sees the
    # whole board; otherwise the lossless check would flag latecomers.
    logins_done = 0.2 + (students - 1) * 0.12
    for i, name in enumerate(roster_students):
        steps.append({"at": round(logins_done + 0.5 + i * 0.08, 3), "actor": name,
                      "action": "chat", "text": f"assalamualaikum, {name} joining"})
    chat_done = logins_done + 0.5 + (students - 1) * 0.08
    start = round(chat_done + 1.5, 3)

    pages = 4
    for i, name in enumerate(roster_students):
        t = round(start + i * (session_secs + 0.5), 3)
        end = round(t + session_secs, 3)
        steps += [
            {"at": t, "actor": teacher, "action": "invite", "student": name},
            {"at": round(t + 0.3, 3), "actor": name, "action": "accept"},
            {"at": round(t + 0.8, 3), "actor": teacher, "action": "set_page",
             "material": "lecture-notes", "page": i % pages},
            {"at": round(t + 1.0, 3), "actor": teacher, "action": "cursor_walk",
             "path": [[0.1, 0.1], [0.9, 0.2], [0.5, 0.8]], "duration": 6.0},
            {"at": round(t + 1.2, 3), "actor": name, "action": "cursor_walk",
             "path": [[0.6, 0.6], [0.2, 0.3]], "duration": 4.0},
            {"at": round(t + 1.5, 3), "actor": teacher, "action": "audio_burst",
             "n": 40, "size": 640, "gap": 0.04},
            {"at": round(t + 4.0, 3), "actor": name, "action": "audio_burst",
             "n": 40, "size": 640, "gap": 0.04},
            {"at": round(t + 7.5, 3), "actor": name, "action": "chat",
             "text": f"terima kasih cikgu, {name} done"},
            {"at": end, "actor": teacher, "action": "end"},
        ]

    assertions: list[dict] = [
        {"name": "public_board_lossless_and_ordered", "check": "public_chat"},
        {"name": "thirty_sessions_ran", "check": "sessions_completed",
         "actor": teacher, "count": students},
        {"name": "audio_order_everywhere", "check": "audio_monotonic", "actor": "*"},
        {"name": "no_unexpected_errors", "check": "no_errored", "actor": "*"},
        {"name": "teacher_heard_every_student", "check": "audio_received",
         "actor": teacher, "min": students * 40, "max": students * 40},
    ]
    for name in roster_students:
        assertions += [
            {"name": f"{name}_heard_teacher", "check": "audio_received",
             "actor": name, "min": 40, "max": 40},
            {"name": f"{name}_saw_cursor", "check": "cursor_received",
             "actor": name, "min": 6, "max": 12},
            {"name": f"{name}_got_page", "check": "page_ready", "actor": name, "min": 1},
            {"name": f"{name}_session_closed", "check": "session_ended",
             "actor": name, "reason": "peer_ended", "min": 1},
        ]

    return {
        "name": f"classroom-{students}-students",
        "config": {"idle_threshold": 3600.0, "sweep_interval": 5.0,
                   "invite_expiry": 30.0},
        "roster": {
            "teachers": [{"username": teacher, "password": "pw-teacher",
                          "display_name": "Cikgu"}],
            "students": [{"username": s, "password": f"pw-{s}"} for s in roster_students],
        },
        "materials": [
            {"name": "lecture-notes", "owner": teacher,
             "pages": [{"size": 90000 + i * 7000, "seed": 41 + i} for i in range(pages)]},
        ],
        "steps": steps,
        "faults": [],
        "assertions": assertions,
    }


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    out = Path(argv[0]) if argv else Path("scenarios/experiment_s4.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(experiment_scenario(), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
