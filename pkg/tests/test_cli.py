import csv

import numpy as np
import pytest

from irsmc import cli, sampling, verify


class TestCli:
    def test_static_to_file(self, tmp_path):
        out = tmp_path / "t1.csv"
        code = cli.cli_main(["static", "--sizes", "20,100", "--runs", "3", "--seed", "7", "--out", str(out)])
        assert code == 0
        with open(out) as fh:
            header = next(csv.reader(fh))
        assert header == ["model", "algo", "N", "M", "run", "metric", "value"]

    def test_stdout_without_out(self, capsys):
        assert cli.cli_main(["arch", "--particles", "5", "--runs", "1", "--horizon", "2"]) == 0
        assert capsys.readouterr().out.startswith("model,algo,N,M,run,metric,value\n")

    def test_json_format(self, capsys):
        assert cli.cli_main(["highdim", "--sizes", "5", "--dims", "4", "--runs", "1",
                             "--horizon", "2", "--format", "json"]) == 0
        assert '"config_hash"' in capsys.readouterr().out

    def test_informative_and_unmatched(self, capsys):
        argv = ["tracking", "--informative", "--no-budget-matched", "--sizes", "4",
                "--runs", "1", "--horizon", "2"]
        assert cli.cli_main(argv) == 0
        rows = capsys.readouterr().out.splitlines()[1:]
        assert all(r.split(",")[2] == "4" for r in rows)

    def test_config_file(self, tmp_path, capsys):
        f = tmp_path / "a.cfg"
        f.write_text("schema=1\nmodel=arch\nsizes=5\nruns=1\nhorizon=2\n")
        assert cli.cli_main(["arch", "--config", str(f)]) == 0
        assert cli.cli_main(["static", "--config", str(f)]) == 2

    @pytest.mark.parametrize("argv", [
        ["static", "--sizes", "0"],
        ["static", "--sizes", "a,b"],
        ["arch", "--param", "gamma=2"],
        ["arch", "--param", "beta0"],
        ["nonsense"],
        [],
    ])
    def test_config_errors_exit_2(self, argv, capsys):
        assert cli.cli_main(argv) == 2
        assert capsys.readouterr().err

    def test_verify_passes(self, capsys):
        assert cli.cli_main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and out.count("PASS") == len(verify.CHECKS)

    def test_verify_tampered_resampler_exits_3(self, monkeypatch, capsys):
        honest = sampling.multinomial_resample

        def biased(w, m, rng):
            # drops the heaviest particle in favour of its neighbour
            idx = honest(w, m, rng)
            top = int(np.argmax(w))
            return np.where(idx == top, (top + 1) % len(w), idx)

        monkeypatch.setattr(sampling, "multinomial_resample", biased)
        assert cli.cli_main(["verify"]) == 3
        assert "FAIL  resampling unbiasedness" in capsys.readouterr().out
