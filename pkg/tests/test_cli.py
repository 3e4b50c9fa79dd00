"""The operator CLI: lifecycle subcommands, exit codes, and replay."""

from __future__ import annotations

import json

from longhaul.cli import EXIT_HALTED, EXIT_OK, EXIT_USAGE, main


def run_cli(*argv: str, capsys=None) -> tuple[int, str, str]:
    code = main(list(argv))
    if capsys is None:
        return code, "", ""
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_full_lifecycle_on_twelve_task_fixture(tmp_path, capsys):
    ws = str(tmp_path / "ws")
    code, out, _ = run_cli("init", "--workspace", ws, "--fixture", "polymer-twelve",
                           "--project-id", "polymer", capsys=capsys)
    assert code == EXIT_OK
    assert "initialized" in out

    code, out, _ = run_cli("plan", "--workspace", ws, "--fixture", "polymer-twelve",
                           "--yes", capsys=capsys)
    assert code == EXIT_OK
    assert "12 tasks" in out

    code, out, _ = run_cli("approve", "--workspace", ws, "--yes", capsys=capsys)
    assert code == EXIT_OK

    code, out, _ = run_cli("run", "--workspace", ws, "--fixture", "polymer-twelve",
                           capsys=capsys)
    assert code == EXIT_OK
    assert "Completed" in out

    code, out, _ = run_cli("status", "--workspace", ws, "--json", capsys=capsys)
    assert code == EXIT_OK
    snapshot = json.loads(out)
    assert snapshot["completed"] is True
    assert all(t["state"]["kind"] == "accepted" for t in snapshot["tasks"])


def test_run_before_approve_exits_nonzero(tmp_path, capsys):
    ws = str(tmp_path / "ws")
    run_cli("init", "--workspace", ws, "--fixture", "polymer-twelve", capsys=capsys)
    run_cli("plan", "--workspace", ws, "--fixture", "polymer-twelve", "--yes",
            capsys=capsys)
    code, _, err = run_cli("run", "--workspace", ws, "--fixture", "polymer-twelve",
                           capsys=capsys)
    assert code == EXIT_USAGE
    assert "not approved" in err


def test_init_refuses_existing_workspace(tmp_path, capsys):
    ws = str(tmp_path / "ws")
    run_cli("init", "--workspace", ws, "--fixture", "polymer-twelve", capsys=capsys)
    run_cli("plan", "--workspace", ws, "--fixture", "polymer-twelve", "--yes",
            capsys=capsys)
    code, _, err = run_cli("init", "--workspace", ws, "--fixture", "polymer-twelve",
                           capsys=capsys)
    assert code == EXIT_USAGE
    assert "resume" in err or "non-empty" in err


def test_replay_matches_status(tmp_path, capsys):
    """Replaying a completed journal reproduces the exact state the run
    reported (oracle: fold_state via the status path)."""
    ws = str(tmp_path / "ws")
    run_cli("init", "--workspace", ws, "--fixture", "alloy-nine", capsys=capsys)
    run_cli("plan", "--workspace", ws, "--fixture", "alloy-nine", "--yes", capsys=capsys)
    run_cli("approve", "--workspace", ws, "--yes", capsys=capsys)
    run_cli("run", "--workspace", ws, "--fixture", "alloy-nine", capsys=capsys)

    code, status_out, _ = run_cli("status", "--workspace", ws, "--json", capsys=capsys)
    assert code == EXIT_OK
    code, replay_out, _ = run_cli("replay", "--workspace", ws, "--json", capsys=capsys)
    assert code == EXIT_OK
    replay = json.loads(replay_out)
    status_snapshot = json.loads(status_out)
    replay_snapshot = dict(replay["snapshot"])
    # status derives the id from project.json; replay from the journal header
    assert replay_snapshot.pop("project_id") == "alloy-nine"
    status_snapshot.pop("project_id")
    assert replay_snapshot == status_snapshot
    assert len(replay["digest"]) == 64


def test_halt_and_resume_via_cli(tmp_path, capsys):
    ws = str(tmp_path / "ws")
    run_cli("init", "--workspace", ws, "--fixture", "halt-twelve", capsys=capsys)
    run_cli("plan", "--workspace", ws, "--fixture", "halt-twelve", "--yes", capsys=capsys)
    run_cli("approve", "--workspace", ws, "--yes", capsys=capsys)
    code, out, _ = run_cli("run", "--workspace", ws, "--fixture", "halt-twelve",
                           capsys=capsys)
    assert code == EXIT_HALTED
    assert "Halted" in out

    code, out, _ = run_cli("status", "--workspace", ws, "--json", capsys=capsys)
    snapshot = json.loads(out)
    assert snapshot["halt"] is not None

    code, out, _ = run_cli("resume", "--workspace", ws, "--fixture", "halt-twelve",
                           "--instruction", "skip the missing prerequisite",
                           "--yes", "--run", capsys=capsys)
    assert code == EXIT_OK
    assert "Completed" in out


def test_operator_halt_on_quiescent_workspace(tmp_path, capsys):
    ws = str(tmp_path / "ws")
    run_cli("init", "--workspace", ws, "--fixture", "polymer-twelve", capsys=capsys)
    run_cli("plan", "--workspace", ws, "--fixture", "polymer-twelve", "--yes",
            capsys=capsys)
    run_cli("approve", "--workspace", ws, "--yes", capsys=capsys)
    code, out, _ = run_cli("halt", "--workspace", ws, "--reason", "operator says stop",
                           capsys=capsys)
    assert code == EXIT_OK
    code, out, _ = run_cli("status", "--workspace", ws, "--json", capsys=capsys)
    assert json.loads(out)["halt"]["reason"] == "operator says stop"


def test_inspect_task(tmp_path, capsys):
    ws = str(tmp_path / "ws")
    run_cli("init", "--workspace", ws, "--fixture", "alloy-nine", capsys=capsys)
    run_cli("plan", "--workspace", ws, "--fixture", "alloy-nine", "--yes", capsys=capsys)
    run_cli("approve", "--workspace", ws, "--yes", capsys=capsys)
    run_cli("run", "--workspace", ws, "--fixture", "alloy-nine", capsys=capsys)
    code, out, _ = run_cli("inspect", "--workspace", ws, "3", capsys=capsys)
    assert code == EXIT_OK
    assert "task 3" in out
    assert "accepted" in out
    assert "summary" in out
    assert "transcript" in out


def test_status_without_journal_errors(tmp_path, capsys):
    ws = str(tmp_path / "ws")
    run_cli("init", "--workspace", ws, "--fixture", "alloy-nine", capsys=capsys)
    code, _, err = run_cli("status", "--workspace", ws, capsys=capsys)
    assert code != EXIT_OK
    assert "journal" in err
