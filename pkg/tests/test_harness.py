import csv

import numpy as np
import pytest

from regmva import cli, harness
from regmva.harness import (CSV_HEADER, ConfigError, ExperimentConfig, ExperimentReport,
                            aggregate, emit_csv, load_config, read_rows, run_cef_vs_sr,
                            run_loss_vs_k, run_tev_vs_k)
from regmva.metrics import MetricRow


def read_agg(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def test_empty_report_is_header_only(tmp_path):
    paths = emit_csv(ExperimentReport("x", ExperimentConfig()), tmp_path / "e.csv")
    assert paths["rows"].read_text() == ",".join(CSV_HEADER) + "\n"


def test_single_row_round_trip(tmp_path):
    row = MetricRow("eigen", "opls", 2, 17, 0.1, 0.25, 1 / 3, np.pi, 1e-300, 12, "true")
    path = tmp_path / "one.csv"
    emit_csv(ExperimentReport("x", ExperimentConfig(), [row], aggregate([row])), path)
    assert len(path.read_text().splitlines()) == 2
    (back,) = read_rows(path)
    for name in CSV_HEADER:
        assert getattr(back, name) == getattr(row, name)


@pytest.fixture(scope="module")
def opls_sweep():
    cfg = ExperimentConfig(variants=("opls",), seeds=50)
    return run_loss_vs_k(cfg)


def test_aggregates_recompute_from_rows(opls_sweep, tmp_path):
    paths = emit_csv(opls_sweep, tmp_path / "loss.csv")
    rows = read_rows(paths["rows"])
    agg = read_agg(paths["aggregate"])
    assert len(agg) == 3 * 7  # one row per (method, k)
    for a in agg:
        vals = [r.loss for r in rows if r.method == a["method"] and r.k == int(a["k"])]
        assert len(vals) == 50 == int(a["count"])
        mean, std = np.mean(vals), np.std(vals)
        assert abs(float(a["loss_mean"]) - mean) <= 1e-12 * max(1.0, abs(mean))
        assert abs(float(a["loss_std"]) - std) <= 1e-12 * max(1.0, abs(mean))


def test_loss_sweep_examples(opls_sweep):
    agg = {(a.method, a.k): a for a in opls_sweep.aggregates}
    cf, eig, pro = agg["closed-form", 3], agg["eigen", 3], agg["procrustes", 3]
    assert abs(eig.loss_mean - cf.loss_mean) <= 1e-8 * abs(cf.loss_mean)
    assert pro.loss_mean > cf.loss_mean
    full = [agg[m, 7].loss_mean for m in ("closed-form", "eigen", "procrustes")]
    assert np.ptp(full) <= 1e-6 * abs(full[0])
    # every configured cell exactly once
    keys = [(r.method, r.k, r.seed) for r in opls_sweep.rows]
    assert len(keys) == len(set(keys)) == 3 * 7 * 50


def test_single_seed_std_zero():
    rep = run_tev_vs_k(ExperimentConfig(variants=("cca",), seeds=1, k=(1, 3)))
    for a in rep.aggregates:
        assert a.loss_std == a.tev_std == a.cef_std == a.sr_std == 0.0
    cf = next(r for r in rep.rows if r.method == "closed-form" and r.k == 1)
    from regmva.core import fit_closed_form, prepare
    prob = prepare(ExperimentConfig().load(), "cca")
    assert cf.tev == pytest.approx(fit_closed_form(prob, "cca", 1).Lambda[0], rel=1e-9)


def test_cef_sweep_small(tmp_path):
    cfg = ExperimentConfig(variants=("opls",), seeds=2, sr_grid=(0.0, 0.4), cef_k=2,
                           cef_methods=("eigen-random", "procrustes-ideal"))
    rep = run_cef_vs_sr(cfg)
    assert rep.errors == 0
    assert len(rep.rows) == 2 * 2 * 2
    for r in rep.rows:
        if r.target_sr == 0.0:
            assert r.gamma == 0.0 and r.cef <= 1e-6
        else:
            assert abs(r.sr - 0.4) <= 0.05
    assert rep.preprocessing["standardize"] is True
    paths = emit_csv(rep, tmp_path / "cef.csv", gnuplot=True)
    assert paths["gnuplot"].read_text().startswith("# method")
    assert "preprocessing.standardize=true" in paths["meta"].read_text()


def test_error_rows_do_not_abort(monkeypatch):
    def boom(*args, **kwargs):
        raise FloatingPointError("injected")
    monkeypatch.setattr(harness, "fit_iterative", boom)
    rep = run_loss_vs_k(ExperimentConfig(variants=("opls",), seeds=2, k=(1, 1)))
    assert rep.errors == 4
    assert all(r.converged == "true" for r in rep.rows if r.method == "closed-form")
    assert {a.method for a in rep.aggregates} == {"closed-form"}


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("# comment\nvariant = opls, cca\nk = 2..4\nseeds=7  # trailing\n"
                 "sr-grid=0,0.2\nstandardize=auto\n")
    cfg = load_config(p, {"seeds": 3, "out": None})
    assert cfg.variants == ("opls", "cca") and cfg.k == (2, 4)
    assert cfg.seeds == 3 and cfg.sr_grid == (0.0, 0.2) and cfg.standardize is None


@pytest.mark.parametrize("text", ["seeds=0", "sr_grid=0.9", "k=3..1", "colour=red", "seeds",
                                  "variant=pls", "penalty=ridge", "k=a"])
def test_config_errors(tmp_path, text):
    p = tmp_path / "bad.cfg"
    p.write_text(text + "\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_k_range_beyond_rank():
    with pytest.raises(ConfigError):
        run_loss_vs_k(ExperimentConfig(variants=("opls",), seeds=1, k=(1, 9)))


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    out = str(tmp_path / "res")
    assert cli.main(["loss-vs-k", "--seeds", "0"]) == 2
    assert cli.main(["tev-vs-k", "--k", "1..9", "--variant", "opls"]) == 2
    assert cli.main(["fit", "--data", str(tmp_path / "none.csv")]) == 2
    assert cli.main(["loss-vs-k", "--variant", "opls", "--k", "1..2", "--seeds", "2",
                     "--out", out]) == 0
    assert (tmp_path / "res" / "loss_vs_k.csv").exists()
    assert cli.main(["fit", "--variant", "cca", "--k", "3", "--method", "procrustes"]) == 0
    assert "loss=" in capsys.readouterr().out
    assert cli.main(["stall-check", "--variant", "opls", "--trials", "3"]) == 0
    monkeypatch.setattr(harness, "fit_iterative",
                        lambda *a, **k: (_ for _ in ()).throw(FloatingPointError("x")))
    assert cli.main(["loss-vs-k", "--variant", "opls", "--k", "1", "--seeds", "1",
                     "--out", out]) == 1


def test_parallel_matches_serial():
    cfg = ExperimentConfig(variants=("opls",), seeds=3, k=(1, 2))
    serial = run_loss_vs_k(cfg)
    parallel = run_loss_vs_k(ExperimentConfig(variants=("opls",), seeds=3, k=(1, 2), jobs=2))
    assert [(r.method, r.k, r.seed, r.loss) for r in serial.rows] == \
        [(r.method, r.k, r.seed, r.loss) for r in parallel.rows]
