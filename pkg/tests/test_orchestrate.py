"""Integration tests for wrapped workflow execution with real agents."""

from __future__ import annotations

import json
import os
import shlex
import subprocess
import sys
import time

import pytest

from wattflow.counter import RaplDomain
from wattflow.errors import (
    AgentStartError,
    InvalidArgumentError,
    SchemaViolationError,
)
from wattflow.logfile import LogStatus, parse_log
from wattflow.orchestrate import (
    AgentEndpoint,
    RunConfig,
    load_run_config,
    resume,
    run_config_from_obj,
    run_wrapped,
)
from wattflow.signals import SessionMarker, signal_start


def write_agent_config(tmp_path, node_id: str, watts: float = 100.0,
                       interval_ms: int = 100) -> str:
    cfg = {
        "node_id": node_id,
        "interval_ms": interval_ms,
        "log_dir": str(tmp_path / "agent_logs"),
        "signal_dir": str(tmp_path / "signals"),
        "max_runtime_s": 60.0,
        "domains": [
            {"domain": "package", "bit_width": 32, "unit_j": 1e-6,
             "backend": {"kind": "mock",
                         "segments": [[3600.0, watts]]}},
        ],
    }
    path = tmp_path / f"agent_{node_id}.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


def agent_cmd_for(config_path: str) -> str:
    return f"{sys.executable} -m wattflow.cli agent --config {config_path}"


def make_run_config(tmp_path, nodes=("n1", "n2"),
                    workflow_cmd: str = "sleep 1.0",
                    session_id: str = "it-run",
                    agent_cmds: dict | None = None,
                    **kwargs) -> RunConfig:
    (tmp_path / "agent_logs").mkdir(exist_ok=True)
    (tmp_path / "signals").mkdir(exist_ok=True)
    (tmp_path / "out").mkdir(exist_ok=True)
    agents = []
    for node in nodes:
        cmd = (agent_cmds or {}).get(node) or \
            agent_cmd_for(write_agent_config(tmp_path, node))
        agents.append(AgentEndpoint(
            node_id=node, exec_template="{cmd}", agent_cmd=cmd,
            signal_dir=str(tmp_path / "signals"),
            log_dir=str(tmp_path / "agent_logs")))
    defaults = dict(poll_interval_s=0.2, startup_timeout_s=10.0,
                    stop_timeout_s=10.0)
    defaults.update(kwargs)
    return RunConfig(workflow_cmd=workflow_cmd, agents=tuple(agents),
                     session_id=session_id,
                     output_dir=str(tmp_path / "out"), **defaults)


class TestRunWrapped:
    def test_two_node_run_measures_before_and_after(self, tmp_path):
        config = make_run_config(tmp_path, workflow_cmd="sleep 1.0")
        result = run_wrapped(config)
        assert result.workflow_exit_code == 0
        report = result.report
        assert report.status == "ok"
        assert report.coverage_fraction == 1.0
        assert sorted(report.per_node) == ["n1", "n2"]
        assert report.total_joules > 0
        assert os.path.exists(result.report_path)
        with open(result.meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        # Start-before-launch: every node recorded strictly before the
        # workflow process was spawned.
        for node in ("n1", "n2"):
            parsed = parse_log(result.log_paths[node])
            assert parsed.status is LogStatus.CLOSED
            series = parsed.series[RaplDomain.PACKAGE]
            first_wall = series.epoch_wall_ns + series.samples[0].t_ns
            assert first_wall < meta["workflow_started_wall_ns"]
        # Markers are gone after the run.
        assert list((tmp_path / "signals").iterdir()) == []

    def test_failed_workflow_still_collects_and_reports(self, tmp_path):
        config = make_run_config(
            tmp_path, nodes=("n1",),
            workflow_cmd="sh -c 'sleep 0.3; exit 7'",
            session_id="it-fail")
        result = run_wrapped(config)
        assert result.workflow_exit_code == 7
        assert result.report.status == "failed"
        assert result.report.total_joules > 0
        parsed = parse_log(result.log_paths["n1"])
        assert parsed.status is LogStatus.CLOSED

    def test_agent_start_failure_aborts_before_workflow(self, tmp_path):
        sentinel = tmp_path / "workflow-ran"
        config = make_run_config(
            tmp_path, nodes=("n1",),
            workflow_cmd=f"touch {sentinel}",
            session_id="it-abort",
            agent_cmds={"n1": "false"},
            startup_timeout_s=1.0)
        with pytest.raises(AgentStartError):
            run_wrapped(config)
        assert not sentinel.exists()
        assert list((tmp_path / "signals").iterdir()) == []

    def test_resume_salvages_abandoned_session(self, tmp_path):
        config = make_run_config(tmp_path, nodes=("n1",),
                                 session_id="it-resume")
        agent_proc = subprocess.Popen(
            shlex.split(config.agents[0].agent_cmd),
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        try:
            signal_start(str(tmp_path / "signals"), SessionMarker(
                session_id="it-resume", created_wall_ns=time.time_ns()))
            deadline = time.monotonic() + 10.0
            log_file = tmp_path / "agent_logs" / "rapl_n1_it-resume.csv"
            while time.monotonic() < deadline:
                if log_file.exists() and log_file.stat().st_size > 200:
                    break
                time.sleep(0.05)
            result = resume(config)
        finally:
            agent_proc.terminate()
            agent_proc.wait(timeout=5)
        assert result.report.status == "failed"
        assert "resumed" in result.report.flags
        assert result.report.total_joules > 0
        parsed = parse_log(result.log_paths["n1"])
        assert parsed.status is LogStatus.CLOSED


class TestRunConfig:
    def test_template_must_embed_cmd_once(self, tmp_path):
        with pytest.raises(InvalidArgumentError, match="exactly once"):
            AgentEndpoint(node_id="n1", exec_template="run-it",
                          agent_cmd="x", signal_dir=".", log_dir=".")
        with pytest.raises(InvalidArgumentError, match="exactly once"):
            AgentEndpoint(node_id="n1", exec_template="{cmd} {cmd}",
                          agent_cmd="x", signal_dir=".", log_dir=".")
        endpoint = AgentEndpoint(
            node_id="n1", exec_template="kubectl exec pod-n1 -- {cmd}",
            agent_cmd="wattflow agent --config a.json",
            signal_dir=".", log_dir=".")
        argv = endpoint.launch_argv()
        assert argv[:4] == ["kubectl", "exec", "pod-n1", "--"]
        assert argv[4:] == ["wattflow", "agent", "--config", "a.json"]

    def test_config_validation(self):
        endpoint = AgentEndpoint(node_id="n1", exec_template="{cmd}",
                                 agent_cmd="x", signal_dir=".",
                                 log_dir=".")
        with pytest.raises(InvalidArgumentError):
            RunConfig(workflow_cmd="", agents=(endpoint,),
                      session_id="s", output_dir=".")
        with pytest.raises(InvalidArgumentError):
            RunConfig(workflow_cmd="sleep 1", agents=(),
                      session_id="s", output_dir=".")
        with pytest.raises(InvalidArgumentError):
            RunConfig(workflow_cmd="sleep 1", agents=(endpoint,),
                      session_id="../evil", output_dir=".")
        with pytest.raises(InvalidArgumentError):
            RunConfig(workflow_cmd="sleep 1", agents=(endpoint, endpoint),
                      session_id="s", output_dir=".")

    def test_document_round_trip_with_overrides(self, tmp_path):
        doc = {
            "workflow_cmd": "sleep 5",
            "session_id": "from-doc",
            "output_dir": str(tmp_path),
            "poll_interval_s": 1.5,
            "agents": [
                {"node_id": "n1", "agent_cmd": "run-agent",
                 "signal_dir": "sig", "log_dir": "logs"},
            ],
        }
        config = run_config_from_obj(doc)
        assert config.poll_interval_s == 1.5
        assert config.agents[0].exec_template == "{cmd}"
        overridden = run_config_from_obj(
            doc, workflow_cmd="sleep 1", session_id="cli-session",
            output_dir="elsewhere")
        assert overridden.workflow_cmd == "sleep 1"
        assert overridden.session_id == "cli-session"
        assert overridden.output_dir == "elsewhere"
        path = tmp_path / "run.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        assert load_run_config(str(path)).session_id == "from-doc"

    def test_bad_documents_rejected(self):
        with pytest.raises(SchemaViolationError):
            run_config_from_obj([])
        with pytest.raises(SchemaViolationError):
            run_config_from_obj({"agents": []})
