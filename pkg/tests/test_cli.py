import textwrap

import pytest

from smckit.cli import (
    EXIT_JOB_FAILURE,
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_USAGE,
    build_parser,
    dispatch,
)

QUERY = textwrap.dedent(
    """\
    -- expectation of an observable on a small step grid
    f(x, obs) = if (s.rval("steps") == x) then s.rval(obs)
                else # f(x, obs) fi;
    eval parametric(E[f(x, obs)], x, 2, 1, 4);
    """
)

CAMPAIGN = textwrap.dedent(
    """\
    simulator: gaussian:0,0.5
    horizon: 5
    grid: {lo: 2, step: 1, hi: 4}
    observables:
      - {name: X, delta: 0.2, direction: higher-is-better}
    experiments:
      - {id: E1, parameter: mu, values: [0.0, 1.0]}
    """
)


@pytest.fixture
def query_file(tmp_path):
    path = tmp_path / "q.quatex"
    path.write_text(QUERY)
    return str(path)


def run_query_args(query_file, *extra):
    return [
        "run-query",
        "--query",
        query_file,
        "--obs",
        "obs=VAL",
        "--delta",
        "0.1",
        "--horizon",
        "5",
        "--sim",
        "counter",
        *extra,
    ]


class TestParser:
    def test_help_documents_subcommands(self, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["--help"])
        text = capsys.readouterr().out
        for name in ("run-query", "run-campaign", "analyze", "scorecard", "protocol-check"):
            assert name in text

    def test_run_query_help_documents_defaults(self, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["run-query", "--help"])
        text = capsys.readouterr().out
        for fragment in ("--delta", "--workers", "--seed-of-seeds", "default 0.05", "default 30"):
            assert fragment in text

    def test_missing_subcommand_is_usage_error(self):
        assert dispatch([]) == EXIT_USAGE

    def test_unknown_flag_is_usage_error(self, query_file):
        assert dispatch(run_query_args(query_file, "--bogus")) == EXIT_USAGE


class TestRunQuery:
    def test_stdout_csv(self, query_file, capsys):
        assert dispatch(run_query_args(query_file)) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "observable,step,mean,ci_halfwidth,n_at_convergence"
        assert [l.split(",")[:3] for l in lines[1:]] == [
            ["VAL", "2", "2.0"],
            ["VAL", "3", "3.0"],
            ["VAL", "4", "4.0"],
        ]

    def test_out_file_and_repeatability(self, query_file, tmp_path):
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        assert dispatch(run_query_args(query_file, "--out", str(out1))) == EXIT_OK
        assert dispatch(run_query_args(query_file, "--out", str(out2))) == EXIT_OK
        assert out1.read_bytes() == out2.read_bytes()

    def test_sim_and_sim_cmd_mutually_exclusive(self, query_file):
        args = run_query_args(query_file, "--sim-cmd", "somesim")
        assert dispatch(args) == EXIT_USAGE

    def test_bad_query_is_usage_error(self, tmp_path):
        bad = tmp_path / "bad.quatex"
        bad.write_text("f() = f();")  # unguarded recursion
        args = [
            "run-query", "--query", str(bad), "--delta", "0.1", "--sim", "counter",
        ]
        assert dispatch(args) == EXIT_USAGE

    def test_partial_convergence_exit_code(self, query_file):
        args = [
            "run-query", "--query", query_file, "--obs", "obs=X",
            "--delta", "0.0001", "--max-runs", "30", "--horizon", "5",
            "--sim", "gaussian:0,1",
        ]
        assert dispatch(args) == EXIT_PARTIAL

    def test_unreachable_external_is_job_failure(self, query_file):
        args = [
            "run-query", "--query", query_file, "--obs", "obs=X",
            "--delta", "0.1", "--horizon", "5", "--sim-cmd", "/nonexistent/sim",
        ]
        assert dispatch(args) == EXIT_JOB_FAILURE


class TestCampaignAndAnalysis:
    def test_full_pipeline_exit_codes(self, tmp_path, capsys):
        config = tmp_path / "c.yaml"
        config.write_text(CAMPAIGN)
        out = tmp_path / "out"
        assert dispatch(["run-campaign", "--config", str(config), "--out", str(out)]) == EXIT_OK
        assert (out / "manifest.json").exists()

        assert dispatch(["analyze", "--in", str(out)]) == EXIT_OK
        assert (out / "plotdata").is_dir()

        sc = tmp_path / "scorecard.csv"
        code = dispatch(
            ["scorecard", "--in", str(out), "--pair", "X,X", "--out", str(sc)]
        )
        assert code == EXIT_OK
        text = capsys.readouterr().out
        assert "E1" in text
        assert sc.read_text().startswith("experiment,winwin,mixed,loselose")

    def test_bad_config_is_usage_error(self, tmp_path):
        config = tmp_path / "c.yaml"
        config.write_text("simulator: counter\n")  # missing required sections
        code = dispatch(["run-campaign", "--config", str(config), "--out", str(tmp_path / "o")])
        assert code == EXIT_USAGE

    def test_failed_job_exit_code(self, tmp_path):
        config = tmp_path / "c.yaml"
        config.write_text(
            "simulator: switching\n"
            "horizon: 5\n"
            "grid: {lo: 2, step: 1, hi: 3}\n"
            "observables: [{name: X, delta: 0.5}]\n"
            "experiments: [{id: E1, parameter: beta, values: [-1.0, 0.4]}]\n"
        )
        code = dispatch(["run-campaign", "--config", str(config), "--out", str(tmp_path / "o")])
        assert code == EXIT_JOB_FAILURE

    def test_scorecard_pair_underivable_without_directions(self, tmp_path):
        config = tmp_path / "c.yaml"
        config.write_text(CAMPAIGN)
        out = tmp_path / "out"
        dispatch(["run-campaign", "--config", str(config), "--out", str(out)])
        # only higher-is-better observables exist, so no pair can be derived
        assert dispatch(["scorecard", "--in", str(out)]) == EXIT_USAGE


class TestProtocolCheckCommand:
    def test_unreachable_command(self, capsys):
        assert dispatch(["protocol-check", "--cmd", "/nonexistent/sim"]) == EXIT_JOB_FAILURE
        assert "FAIL" in capsys.readouterr().out
