import configparser
import re

import pytest

from unbiased_implicit.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from unbiased_implicit.fileio import read_csv

SMALL = ["--m", "30", "--n", "40"]


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["generate", *SMALL, "--p", "1", "--seed", "3", "--out-dir", str(out)]) == EXIT_OK
    return out


def last_line(capsys):
    return capsys.readouterr().out.strip().splitlines()[-1]


class TestGenerate:
    def test_outputs(self, generated):
        for name in ("gamma.tsv", "theta.tsv", "clicks.tsv", "relevance.tsv", "config.ini"):
            assert (generated / name).is_file()
        assert len((generated / "relevance.tsv").read_text().splitlines()) == 30 * 40 + 1

    def test_deterministic(self, generated, tmp_path):
        main(["generate", *SMALL, "--p", "1", "--seed", "3", "--out-dir", str(tmp_path)])
        for name in ("gamma.tsv", "theta.tsv", "clicks.tsv"):
            assert (tmp_path / name).read_bytes() == (generated / name).read_bytes()

    def test_bad_p_writes_nothing(self, tmp_path):
        out = tmp_path / "o"
        assert main(["generate", "--p", "0", "--out-dir", str(out)]) == EXIT_USAGE
        assert not out.exists()

    def test_stronger_skew_fewer_clicks(self, tmp_path, capsys):
        counts = []
        for p in ("0.5", "4"):
            main(["generate", *SMALL, "--p", p, "--out-dir", str(tmp_path / p)])
            counts.append(int(re.search(r"clicks=(\d+)", last_line(capsys)).group(1)))
        assert counts[1] < counts[0]

    def test_supplied_bases(self, tmp_path):
        from unbiased_implicit.fileio import read_matrix, write_matrix

        write_matrix(tmp_path / "r.tsv", [[5.0, 1.0], [3.0, 5.0]])
        write_matrix(tmp_path / "o.tsv", [[0.25, 1.0], [0.5, 0.5]])
        out = tmp_path / "o"
        args = ["generate", "--rating-base", str(tmp_path / "r.tsv"), "--observation-base", str(tmp_path / "o.tsv")]
        assert main([*args, "--p", "0.5", "--out-dir", str(out)]) == EXIT_OK
        assert read_matrix(out / "gamma.tsv")[0, 0] == 0.5
        assert read_matrix(out / "theta.tsv")[0, 0] == 0.5

    def test_supplied_bases_out_of_range(self, tmp_path):
        from unbiased_implicit.fileio import write_matrix

        write_matrix(tmp_path / "r.tsv", [[6.0]])
        write_matrix(tmp_path / "o.tsv", [[0.5]])
        args = ["generate", "--rating-base", str(tmp_path / "r.tsv"), "--observation-base", str(tmp_path / "o.tsv")]
        assert main([*args, "--out-dir", str(tmp_path / "x")]) == EXIT_USAGE
        assert main(["generate", "--rating-base", str(tmp_path / "r.tsv"), "--out-dir", str(tmp_path / "x")]) == EXIT_USAGE
        assert not (tmp_path / "x").exists()

    def test_unknown_flag(self, capsys):
        assert main(["generate", "--bogus"]) == EXIT_USAGE


class TestConfig:
    def test_precedence_and_echo(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[common]\nseed = 9\n\n[generate]\nm = 12\nn = 15\np = 2\n")
        out = tmp_path / "o"
        assert main(["generate", "--config", str(ini), "--n", "16", "--out-dir", str(out)]) == EXIT_OK
        echo = configparser.ConfigParser()
        echo.read(out / "config.ini")
        assert echo["generate"]["seed"] == "9"
        assert echo["generate"]["m"] == "12"
        assert echo["generate"]["n"] == "16"
        assert echo["generate"]["p"] == "2.0"

    def test_unknown_key(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[generate]\nbogus = 1\n")
        assert main(["generate", "--config", str(ini), "--out-dir", str(tmp_path / "o")]) == EXIT_USAGE

    def test_missing_config(self, tmp_path):
        assert main(["generate", "--config", str(tmp_path / "none.ini")]) == EXIT_USAGE


class TestTrainEvaluate:
    def train(self, generated, out, *extra):
        return main([
            "train", "--clicks", str(generated / "clicks.tsv"), "--epochs", "5",
            "--tuning", "loss", "--out-dir", str(out), *extra,
        ])

    def test_train_and_evaluate(self, generated, tmp_path, capsys):
        assert self.train(generated, tmp_path / "t", "--estimator", "unbiased", "--propensity", "popularity") == EXIT_OK
        for name in ("model.npz", "history.csv", "propensities.tsv", "config.ini"):
            assert (tmp_path / "t" / name).is_file()
        code = main([
            "evaluate", "--model", str(tmp_path / "t" / "model.npz"), "--labels", str(generated / "relevance.tsv"),
            "--gamma", str(generated / "gamma.tsv"), "--clicks", str(generated / "clicks.tsv"),
            "--out-dir", str(tmp_path / "e"),
        ])
        assert code == EXIT_OK
        rows = read_csv(tmp_path / "e" / "metrics.csv")
        assert list(rows[0]) == ["metric", "K", "item_group", "value"]
        metrics = {r["metric"] for r in rows}
        assert {"DCG", "Recall", "MAP", "relevance_DCG", "ideal_log_loss"} <= metrics
        assert {r["item_group"] for r in rows} == {"all", "rare"}

    def test_naive_equals_clip_one(self, generated, tmp_path, capsys):
        losses = []
        for args in (("--estimator", "wmf", "--c", "1"), ("--estimator", "clipped", "--clip", "1", "--propensity", "oracle", "--theta", str(generated / "theta.tsv"))):
            assert self.train(generated, tmp_path / args[1], *args) == EXIT_OK
            losses.append(re.search(r"validation_loss=(\S+)", last_line(capsys)).group(1))
        assert losses[0] == losses[1]

    def test_unbiased_needs_propensity_source(self, generated, tmp_path):
        assert self.train(generated, tmp_path / "t", "--estimator", "unbiased") == EXIT_USAGE
        assert not (tmp_path / "t").exists()

    def test_clipped_with_popularity(self, generated, tmp_path):
        args = ("--estimator", "clipped", "--clip", "0.1", "--propensity", "popularity")
        assert self.train(generated, tmp_path / "t", *args) == EXIT_OK

    def test_oracle_propensity_needs_theta(self, generated, tmp_path):
        out = tmp_path / "t"
        assert self.train(generated, out, "--propensity", "oracle") == EXIT_USAGE
        assert not out.exists()

    def test_clip_grid_search(self, generated, tmp_path, capsys):
        code = main([
            "train", "--clicks", str(generated / "clicks.tsv"), "--epochs", "3",
            "--estimator", "clipped", "--propensity", "popularity", "--out-dir", str(tmp_path / "g"),
        ])
        assert code == EXIT_OK
        assert "selected clip=" in capsys.readouterr().out

    def test_evaluate_needs_labels(self, tmp_path, generated):
        self.train(generated, tmp_path / "t")
        assert main(["evaluate", "--model", str(tmp_path / "t" / "model.npz")]) == EXIT_USAGE

    def test_missing_clicks(self, tmp_path):
        assert main(["train", "--clicks", str(tmp_path / "none.tsv")]) == EXIT_USAGE


class TestOracle:
    def test_passes_with_true_propensities(self, tmp_path, capsys):
        assert main(["oracle", "--trials", "2000", "--out-dir", str(tmp_path)]) == EXIT_OK
        rows = read_csv(tmp_path / "oracle.csv")
        assert len(rows) == 5 + 5
        assert (tmp_path / "clip_sweep.csv").is_file()

    def test_misspecified_fails(self, tmp_path, capsys):
        assert main(["oracle", "--trials", "5000", "--propensity-scale", "2", "--out-dir", str(tmp_path)]) == EXIT_FAIL
        assert "failed" in capsys.readouterr().out

    def test_too_few_trials(self, tmp_path):
        assert main(["oracle", "--trials", "10", "--out-dir", str(tmp_path / "o")]) == EXIT_USAGE
        assert not (tmp_path / "o").exists()


class TestSweep:
    ARGS = ["sweep", "--m", "20", "--n", "30", "--p-values", "1,3", "--num-seeds", "2", "--epochs", "3", "--max-k", "3"]

    def test_outputs_and_workers(self, tmp_path, capsys):
        assert main([*self.ARGS, "--out-dir", str(tmp_path / "a")]) == EXIT_OK
        assert main([*self.ARGS, "--workers", "2", "--out-dir", str(tmp_path / "b")]) == EXIT_OK
        for name in ("sweep.csv", "sweep_runs.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        rows = read_csv(tmp_path / "a" / "sweep.csv")
        assert list(rows[0]) == ["p", "model", "metric", "K", "value"]
        assert len(rows) == 2 * 3 * (1 + 3)

    def test_bad_p(self, tmp_path):
        assert main(["sweep", "--p-values", "0,1", "--out-dir", str(tmp_path / "o")]) == EXIT_USAGE
