"""
Tests for the graph file codec and run-output frames.
"""
import numpy as np
import pytest

from resilient_el_consensus.errors import GraphFormatError
from resilient_el_consensus.services.graph import Digraph
from resilient_el_consensus.services.simulation import run_scenario
from resilient_el_consensus.utils.file_utils import (
    format_graph,
    message_frame,
    parse_graph,
    read_graph,
    trajectory_frame,
    trigger_frame,
    write_graph,
    write_run_outputs,
)


class TestGraphCodec:
    def test_parse_with_comments(self):
        g = parse_graph("# three agents\n3\n\n1: 2 3\n2: 1  # only agent 1\n")
        assert g.in_neighbors(1) == [2, 3]
        assert g.in_neighbors(2) == [1]
        assert g.in_neighbors(3) == []

    def test_format_is_stable(self):
        g = Digraph.from_in_neighbors(3, {1: [2, 3], 3: [1]})
        assert format_graph(g) == "3\n1: 2 3\n2:\n3: 1\n"
        assert parse_graph(format_graph(g)) == g

    def test_write_and_read(self, tmp_path):
        g = Digraph.complete(4)
        path = write_graph(g, str(tmp_path / "sub" / "g.txt"))
        assert read_graph(path) == g

    @pytest.mark.parametrize("text, line", [
        ("", 1),
        ("x\n", 1),
        ("0\n", 1),
        ("3\n1 2\n", 2),
        ("3\n1: 4\n", 2),
        ("3\n1: 1\n", 2),
        ("3\n1: 2\n\n1: 3\n", 4),
        ("3\n1: 2 2\n", 2),
        ("3\n4: 1\n", 2),
    ])
    def test_errors_carry_line(self, text, line):
        with pytest.raises(GraphFormatError) as info:
            parse_graph(text)
        assert info.value.line == line


class TestRunFrames:
    def test_frames(self, scenario_factory, ref_eta0):
        out = run_scenario(scenario_factory(Digraph.complete(3), ref_eta0[:3], horizon=0.1, decimation=100))
        traj = trajectory_frame(out)
        assert list(traj.columns) == ["t", "agent", "q1", "q2", "dq1", "dq2", "eta1", "eta2", "W1", "W2"]
        assert len(traj) == out.times.size * 3
        assert traj["agent"].tolist()[:3] == [1, 2, 3]
        np.testing.assert_array_equal(traj[["q1", "q2"]].to_numpy()[3:6], out.q[1])
        assert list(trigger_frame(out).columns) == ["agent", "t"]
        messages = message_frame(out)
        assert set(messages["accepted"]) <= {"true", "false"}

    def test_output_files(self, scenario_factory, ref_eta0, tmp_path):
        g = Digraph.complete(3)
        out = run_scenario(scenario_factory(g, ref_eta0[:3], horizon=0.01))
        paths = write_run_outputs(out, g, str(tmp_path / "run"), "report\n", [("a", "1")])
        assert (tmp_path / "run" / "metrics.kv").read_text() == "a=1\n"
        header = (tmp_path / "run" / "consensus_errors.csv").read_text().splitlines()[0]
        assert header == "t,agent,e1,e2,norm"
        assert set(paths) == {"trajectory", "triggers", "messages", "consensus_errors", "metrics", "metrics_kv"}
        row = (tmp_path / "run" / "trajectory.csv").read_text().splitlines()[2]
        assert row.startswith("0,2,")
