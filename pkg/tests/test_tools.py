"""Command line tools: offline admin and the scenario harness."""

import json

import pytest

from eteach.server.store import Repo, load_users
from eteach.tools import admin
from eteach.tools import cli as sim
from eteach.tools.runner import ScenarioRunner
from eteach.tools.scenario import ScenarioInvalid, load_scenario


class TestAdminUsers:
    def test_add_user_then_list(self, tmp_path, capsys):
        users = tmp_path / "users.json"
        rc = admin.main(["add-user", "--users", str(users),
                         "mira", "secret", "teacher", "--display-name", "Mira"])
        assert rc == 0
        rc = admin.main(["users", "--users", str(users)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "mira" in out and "role=teacher" in out and "'Mira'" in out
        rec = load_users(users)["mira"]
        assert rec.role == "teacher"

    def test_duplicate_user_is_a_domain_error(self, tmp_path, capsys):
        users = tmp_path / "users.json"
        argv = ["add-user", "--users", str(users), "mira", "secret", "student"]
        assert admin.main(argv) == 0
        assert admin.main(argv) == 1
        assert "DUPLICATE_USER" in capsys.readouterr().err

    def test_bad_role_is_a_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            admin.main(["add-user", "--users", str(tmp_path / "u.json"),
                        "mira", "secret", "admin"])
        assert exc.value.code == 2


class TestAdminMaterials:
    def test_upload_then_list(self, tmp_path, capsys):
        img1 = tmp_path / "p1.img"
        img2 = tmp_path / "p2.img"
        img1.write_bytes(b"\x11" * 500)
        img2.write_bytes(b"\x22" * 700)
        repo_dir = tmp_path / "repo"
        rc = admin.main(["upload", "--repo-dir", str(repo_dir),
                         "--name", "algebra", "--owner", "mira",
                         str(img1), str(img2)])
        assert rc == 0
        manifest = json.loads(capsys.readouterr().out)
        assert manifest["name"] == "algebra"
        assert len(manifest["pages"]) == 2

        rc = admin.main(["list", "--repo-dir", str(repo_dir)])
        assert rc == 0
        out = capsys.readouterr().out
        assert manifest["material_id"] in out and "bytes=1200" in out
        # the repo on disk agrees with what the tool printed
        rec = Repo(repo_dir).list()[0]
        assert rec.material_id == manifest["material_id"]
        assert rec.sizes == [500, 700]

    def test_upload_without_pages_rejected(self, tmp_path, capsys):
        rc = admin.main(["upload", "--repo-dir", str(tmp_path / "repo"),
                         "--name", "empty"])
        assert rc == 1
        assert "EMPTY_MATERIAL" in capsys.readouterr().err

    def test_unreadable_image_is_a_usage_error(self, tmp_path, capsys):
        rc = admin.main(["upload", "--repo-dir", str(tmp_path / "repo"),
                         "--name", "x", str(tmp_path / "missing.img")])
        assert rc == 2
        assert "cannot read" in capsys.readouterr().err


def _tiny_scenario(tmp_path, *, fail=False):
    doc = {
        "name": "tiny",
        "config": {"idle_threshold": 3600, "sweep_interval": 5,
                   "invite_expiry": 30},
        "roster": {
            "teachers": [{"username": "t", "password": "pw-t"}],
            "students": [{"username": "s", "password": "pw-s"}],
        },
        "materials": [
            {"name": "deck", "owner": "t",
             "pages": [{"size": 4000, "seed": 7}, {"size": 5000, "seed": 8}]},
        ],
        "steps": [
            {"at": 0.0, "actor": "t", "action": "login"},
            {"at": 0.1, "actor": "s", "action": "login"},
            {"at": 0.4, "actor": "t", "action": "chat", "text": "salam"},
            {"at": 0.5, "actor": "s", "action": "chat", "text": "hai"},
            {"at": 0.8, "actor": "t", "action": "invite", "student": "s"},
            {"at": 1.0, "actor": "s", "action": "accept"},
            {"at": 1.3, "actor": "t", "action": "set_page",
             "material": "deck", "page": 1},
            {"at": 1.8, "actor": "t", "action": "end"},
        ],
        "assertions": [
            {"name": "board", "check": "public_chat"},
            {"name": "lesson", "check": "sessions_completed",
             "actor": "s", "count": 1},
            {"name": "page", "check": "page_converged",
             "teacher": "t", "student": "s"},
            {"name": "quiet", "check": "errored", "actor": "s",
             "code": "BAD_PAGE", "min": 1}
            if fail else
            {"name": "quiet", "check": "no_errored", "actor": "*"},
        ],
    }
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


class TestSimCli:
    def test_run_pass_writes_report(self, tmp_path, capsys):
        scenario = _tiny_scenario(tmp_path)
        report_path = tmp_path / "report.json"
        rc = sim.main(["run", str(scenario), "--report", str(report_path)])
        out = capsys.readouterr().out
        assert rc == 0, out
        assert "scenario 'tiny': PASS" in out
        report = json.loads(report_path.read_text())
        assert report["ok"] is True
        assert {a["name"] for a in report["assertions"]} == {
            "board", "lesson", "page", "quiet"}
        assert report["metrics"]["messages"]["public_sent"] == 2

    def test_failed_assertion_sets_exit_code(self, tmp_path, capsys):
        scenario = _tiny_scenario(tmp_path, fail=True)
        rc = sim.main(["run", str(scenario)])
        out = capsys.readouterr().out
        assert rc == 1
        assert "scenario 'tiny': FAIL" in out
        assert "[FAIL] quiet" in out

    def test_invalid_scenario_is_a_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"name": "x"}), encoding="utf-8")
        rc = sim.main(["run", str(bad)])
        assert rc == 2
        assert "SCENARIO_INVALID" in capsys.readouterr().err

    def test_unparseable_file_is_a_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        rc = sim.main(["run", str(bad)])
        assert rc == 2
        assert "SCENARIO_INVALID" in capsys.readouterr().err

    def test_missing_file_is_a_usage_error(self, tmp_path, capsys):
        rc = sim.main(["run", str(tmp_path / "nope.json")])
        assert rc == 2
        assert "SCENARIO_INVALID" in capsys.readouterr().err


class TestRunnerDirect:
    def test_shipped_fault_drill_passes(self):
        scenario = load_scenario("scenarios/fault_drill.json")
        report = ScenarioRunner(scenario).run()
        failed = [r for r in report.assertions if not r.ok]
        assert report.ok, (failed, report.step_failures)
        # the drill loses audio on purpose: a stalled reader with small
        # buffers must force server-side drops, not a hang
        audio = report.metrics["audio"]
        assert audio["dropped_at_server"] > 0
        assert (audio["sent"] == audio["delivered"] + audio["dropped_at_server"]
                + audio["in_flight_at_shutdown"])

    def test_rejects_unknown_actor_in_steps(self, tmp_path):
        doc = json.loads(_tiny_scenario(tmp_path).read_text())
        doc["steps"][0]["actor"] = "ghost"
        path = tmp_path / "ghost.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(ScenarioInvalid):
            load_scenario(path)
