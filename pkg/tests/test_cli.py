"""End-to-end CLI checks: artifacts, guards, determinism, exit codes."""

from __future__ import annotations

import json
import os

import numpy as np
import pytest

from coactive import InputPrior, lhs_design, load_model, save_prior
from coactive.cli import main
from coactive.closedform import load_matrix, save_matrix

UNIT2 = ((0.0, 1.0), (0.0, 1.0))


def _write_train(path, n=150, seed=2, target="full"):
    X = lhs_design(n, 2, UNIT2, seed=seed)
    if target == "full":
        y = X[:, 0] ** 2 + X[:, 0] * X[:, 1] + 0.5 * X[:, 1] ** 3
    elif target == "base":
        y = X[:, 0] ** 2 + X[:, 0] * X[:, 1]
    else:
        y = np.full(n, 3.0)
    with open(path, "w") as fh:
        fh.write("x1,x2,y\n")
        for row, val in zip(X, y):
            fh.write(f"{row[0]:.17g},{row[1]:.17g},{val:.17g}\n")
    return path


@pytest.fixture()
def prior2(tmp_path):
    path = tmp_path / "prior.json"
    save_prior(InputPrior.uniform_box(UNIT2), path)
    return str(path)


@pytest.fixture()
def fitted_pair(tmp_path, prior2):
    """Two fitted model JSONs and their prior, via the fit subcommand."""
    train_a = _write_train(tmp_path / "a.csv", target="base")
    train_b = _write_train(tmp_path / "b.csv", target="full")
    out_a = str(tmp_path / "ma.json")
    out_b = str(tmp_path / "mb.json")
    assert main(["fit", str(train_a), "--out", out_a, "--prior", prior2]) == 0
    assert main(["fit", str(train_b), "--out", out_b, "--prior", prior2]) == 0
    return out_a, out_b


# -- fit ---------------------------------------------------------------------


def test_fit_writes_model_and_report(tmp_path, prior2, capsys):
    train = _write_train(tmp_path / "t.csv")
    out = str(tmp_path / "m.json")
    assert main(["fit", str(train), "--out", out, "--prior", prior2, "--cv", "3"]) == 0
    assert "fit:" in capsys.readouterr().out
    m = load_model(out)
    assert m.p == 2 and m.domain == UNIT2
    rep = json.loads((tmp_path / "m.report.json").read_text())
    assert rep["n"] == 150 and rep["r2"] > 0.99
    assert rep["response"] == "y" and rep["inputs"] == ["x1", "x2"]
    assert 0 <= rep["cv_rmspe"] < 0.5
    assert rep["meta"]["version"] and rep["meta"]["config"]


def test_fit_refuses_overwrite_without_force(tmp_path, prior2, capsys):
    train = _write_train(tmp_path / "t.csv")
    out = str(tmp_path / "m.json")
    assert main(["fit", str(train), "--out", out, "--prior", prior2]) == 0
    assert main(["fit", str(train), "--out", out, "--prior", prior2]) == 1
    assert "--force" in capsys.readouterr().err
    before = (open(out, "rb").read(), (tmp_path / "m.report.json").read_bytes())
    assert main(["fit", str(train), "--out", out, "--prior", prior2, "--force"]) == 0
    after = (open(out, "rb").read(), (tmp_path / "m.report.json").read_bytes())
    assert before == after  # reruns are bitwise-identical


def test_fit_ensemble_directory(tmp_path, prior2, capsys):
    train = _write_train(tmp_path / "t.csv")
    out = str(tmp_path / "ens")
    assert main(["fit", str(train), "--out", out, "--prior", prior2, "--ensemble", "3",
                 "--seed", "5"]) == 0
    rep = json.loads((tmp_path / "ens" / "report.json").read_text())
    assert rep["members"] == 3
    from coactive import load_ensemble

    ens = load_ensemble(out)
    assert len(ens) == 3
    # non-empty output directory is guarded
    assert main(["fit", str(train), "--out", out, "--prior", prior2, "--ensemble", "3"]) == 1
    assert "non-empty" in capsys.readouterr().err


def test_fit_constant_response_still_succeeds(tmp_path, prior2):
    train = _write_train(tmp_path / "c.csv", target="constant")
    out = str(tmp_path / "m.json")
    with pytest.warns(UserWarning, match="zero variance"):
        assert main(["fit", str(train), "--out", out, "--prior", prior2]) == 0
    rep = json.loads((tmp_path / "m.report.json").read_text())
    assert rep["constant"] is True and rep["n_terms"] == 0


def test_fit_malformed_csv_reports_line(tmp_path, prior2, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,x2,y\n0.1,0.2,1.0\n0.3,0.4\n")
    assert main(["fit", str(bad), "--out", str(tmp_path / "m.json")]) == 1
    assert "line 3" in capsys.readouterr().err


def test_missing_input_file_fails_cleanly(tmp_path, capsys):
    assert main(["fit", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "m.json")]) == 1
    assert "error:" in capsys.readouterr().err


# -- cmat / analyze -------------------------------------------------------------


def test_cmat_writes_complete_bundle(tmp_path, prior2, fitted_pair, capsys):
    ma, mb = fitted_pair
    out = tmp_path / "pair"
    assert main(["cmat", ma, mb, "--prior", prior2, "--out-dir", str(out),
                 "--modified", "--mc", "2000", "--seed", "3"]) == 0
    assert "concordance kappa=" in capsys.readouterr().out
    for name in ("c_kl.csv", "c_kl.json", "v_kl.csv", "c_kk.csv", "c_ll.csv",
                 "analysis.json", "ratios.csv", "c_modified.csv", "mc.json"):
        assert (out / name).exists(), name
    rep = json.loads((out / "analysis.json").read_text())
    for key in ("pair", "concordance", "discordance", "t_k", "t_l", "eigvals",
                "eigvecs", "contributions", "signed_scores", "unsigned_scores",
                "q", "r_selected", "mc_frobenius", "mc_frobenius_rel", "modified_trace"):
        assert key in rep, key
    assert -1.0 <= rep["concordance"] <= 1.0
    assert rep["mc_frobenius_rel"] < 0.2
    V = np.loadtxt(out / "v_kl.csv", delimiter=",", comments="#")
    np.testing.assert_array_equal(V, V.T)
    mc = json.loads((out / "mc.json").read_text())
    assert mc["B"] == 2000 and mc["seed"] == 3
    # contributions sum to the concordance
    assert sum(rep["contributions"]) == pytest.approx(rep["concordance"], abs=1e-12)


def test_cmat_rerun_is_bitwise_identical(tmp_path, prior2, fitted_pair):
    ma, mb = fitted_pair
    out = tmp_path / "pair"
    args = ["cmat", ma, mb, "--prior", prior2, "--out-dir", str(out)]
    assert main(args) == 0
    blobs = {n: (out / n).read_bytes() for n in os.listdir(out)}
    assert main(args) == 1  # guard fires
    assert main([*args, "--force"]) == 0
    for name, blob in blobs.items():
        assert (out / name).read_bytes() == blob, name


def test_cmat_q_auto_requires_tau(tmp_path, prior2, fitted_pair, capsys):
    ma, mb = fitted_pair
    out = tmp_path / "pair"
    assert main(["cmat", ma, mb, "--prior", prior2, "--out-dir", str(out),
                 "--q", "auto"]) == 1
    assert "--q auto requires --tau" in capsys.readouterr().err
    assert main(["cmat", ma, mb, "--prior", prior2, "--out-dir", str(out),
                 "--q", "auto", "--tau", "0.05", "--force"]) == 0
    rep = json.loads((out / "analysis.json").read_text())
    assert rep["q"] >= 1 and rep["r_selected"] is not None


def test_analyze_matches_cmat(tmp_path, prior2, fitted_pair, capsys):
    from coactive import cmat
    from coactive.closedform import load_prior

    ma_path, mb_path = fitted_pair
    out = tmp_path / "pair"
    assert main(["cmat", ma_path, mb_path, "--prior", prior2, "--out-dir", str(out)]) == 0
    cm_rep = json.loads((out / "analysis.json").read_text())

    prior = load_prior(prior2)
    ma, mb = load_model(ma_path), load_model(mb_path)
    save_matrix(cmat(ma, ma, prior), tmp_path / "ckk.json")
    save_matrix(cmat(mb, mb, prior), tmp_path / "cll.json")
    out2 = tmp_path / "analysis2.json"
    assert main(["analyze", "--matrix", str(out / "c_kl.json"),
                 "--self-k", str(tmp_path / "ckk.json"),
                 "--self-l", str(tmp_path / "cll.json"),
                 "--out", str(out2), "--ratios", str(tmp_path / "r.csv")]) == 0
    an_rep = json.loads(out2.read_text())
    assert an_rep["concordance"] == cm_rep["concordance"]
    assert an_rep["eigvals"] == cm_rep["eigvals"]
    ratios = (tmp_path / "r.csv").read_text().splitlines()
    assert ratios[1] == "input,alpha_k_over_kl,alpha_l_over_kl"
    assert len(ratios) == 4  # comment, header, two inputs


# -- mc ----------------------------------------------------------------------------


def test_mc_builtin_pair(tmp_path, capsys):
    out = tmp_path / "mc.json"
    assert main(["mc", "--fn", "builtin:poly?beta=3", "--B", "4000",
                 "--seed", "9", "--out", str(out)]) == 0
    assert "mc: B=4000" in capsys.readouterr().out
    d = json.loads(out.read_text())
    assert d["B"] == 4000 and d["seed"] == 9 and d["h"] is None
    assert d["labels"] == ["poly-f1", "poly-f2-beta3"]
    exact = [[8 / 3, 11 / 12 + 5.25], [11 / 12, 1 / 3 + 1.5]]
    got = np.array(d["entries"])
    se = np.array(d["se_entries"])
    assert np.all(np.abs(got - exact) <= 5.0 * se)


def test_mc_single_function_is_self_pair(tmp_path):
    out = tmp_path / "mc.json"
    assert main(["mc", "--fn", "builtin:linear?a=1,2", "--B", "16", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    np.testing.assert_allclose(d["entries"], [[1.0, 2.0], [2.0, 4.0]], rtol=1e-12)


def test_mc_model_file_and_validation(tmp_path, prior2, fitted_pair, capsys):
    ma, mb = fitted_pair
    out = tmp_path / "mc.json"
    assert main(["mc", "--model", ma, "--model", mb, "--prior", prior2,
                 "--B", "500", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["h"] is None  # surrogate gradients are analytic
    assert main(["mc", "--model", ma, "--model", mb, "--fn", "builtin:piston",
                 "--B", "10", "--out", str(tmp_path / "x.json")]) == 1
    assert "one or two functions" in capsys.readouterr().err


# -- cluster --------------------------------------------------------------------------


@pytest.fixture()
def two_ensembles(tmp_path, prior2):
    outs = []
    for i, beta in enumerate((0.5, 4.0)):
        train = tmp_path / f"t{i}.csv"
        X = lhs_design(100, 2, UNIT2, seed=20 + i)
        y = X[:, 0] ** 2 + X[:, 0] * X[:, 1] + beta * X[:, 1] ** 3
        with open(train, "w") as fh:
            fh.write("x1,x2,y\n")
            for row, val in zip(X, y):
                fh.write(f"{row[0]:.17g},{row[1]:.17g},{val:.17g}\n")
        out = str(tmp_path / f"ens{i}")
        assert main(["fit", str(train), "--out", out, "--prior", prior2,
                     "--ensemble", "2", "--seed", str(30 + i), "--label", f"b{beta:g}"]) == 0
        outs.append(out)
    return outs


def test_cluster_bundle(tmp_path, prior2, two_ensembles, capsys):
    out = tmp_path / "clust"
    assert main(["cluster", *two_ensembles, "--prior", prior2,
                 "--out-dir", str(out), "--seed", "1"]) == 0
    captured = capsys.readouterr()
    assert "cluster: stress=" in captured.out
    assert "grid:" in captured.err  # wall-clock note goes to stderr only
    for name in ("grid_summary.csv", "grid_samples.csv", "discordance.csv",
                 "embedding.csv", "centers.csv", "embedding.json"):
        assert (out / name).exists(), name
    emb = json.loads((out / "embedding.json").read_text())
    assert emb["n_members"] == 4 and emb["n_pairs"] == 6 and emb["n_excluded"] == 0
    assert emb["stress"] == emb["stress_history"][-1]
    assert np.all(np.diff(emb["stress_history"]) <= 1e-12)
    summary = (out / "grid_summary.csv").read_text().splitlines()
    assert len(summary) == 2 + 4  # comment, header, K^2 rows
    samples = (out / "grid_samples.csv").read_text().splitlines()
    assert len(samples) == 2 + 16
    # ensembles are labelled by directory basename at load time
    assert samples[2].startswith("ens0[0],ens0[0],1")
    centers = (out / "centers.csv").read_text().splitlines()
    assert centers[1] == "label,cx,cy"


def test_cluster_trace_only_same_numbers(tmp_path, prior2, two_ensembles):
    full = tmp_path / "full"
    fast = tmp_path / "fast"
    assert main(["cluster", *two_ensembles, "--prior", prior2, "--out-dir", str(full)]) == 0
    assert main(["cluster", *two_ensembles, "--prior", prior2, "--out-dir", str(fast),
                 "--trace-only"]) == 0
    # identical numbers; only the meta comment line (config hash) may differ
    rows = lambda p: (p / "discordance.csv").read_text().splitlines()[1:]
    assert rows(full) == rows(fast)
    assert json.loads((fast / "embedding.json").read_text())["trace_only"] is True


def test_cluster_thread_env_and_rerun_identical(tmp_path, prior2, two_ensembles, monkeypatch):
    out = tmp_path / "clust"
    args = ["cluster", *two_ensembles, "--prior", prior2, "--out-dir", str(out)]
    assert main(args) == 0
    blobs = {n: (out / n).read_bytes() for n in os.listdir(out)}
    monkeypatch.setenv("COAS_THREADS", "2")
    assert main([*args, "--force"]) == 0
    for name, blob in blobs.items():
        assert (out / name).read_bytes() == blob, name


def test_cluster_single_model_and_mixed_inputs(tmp_path, prior2, two_ensembles, fitted_pair, capsys):
    assert main(["cluster", two_ensembles[0], "--prior", prior2,
                 "--out-dir", str(tmp_path / "one")]) == 1
    assert "at least 2" in capsys.readouterr().err
    out = tmp_path / "mixed"
    assert main(["cluster", two_ensembles[0], fitted_pair[0], "--prior", prior2,
                 "--out-dir", str(out)]) == 0
    emb = json.loads((out / "embedding.json").read_text())
    assert emb["n_members"] == 3


# -- bound -----------------------------------------------------------------------------


def test_bound_leading_eigvecs_and_explicit_basis(tmp_path, prior2, fitted_pair):
    ma, _ = fitted_pair
    out1 = tmp_path / "b1.json"
    assert main(["bound", ma, "--prior", prior2, "--r", "1", "--out", str(out1)]) == 0
    rep1 = json.loads(out1.read_text())
    assert rep1["bound"] >= 0.0 and rep1["r"] == 1
    assert rep1["basis_source"] == "leading-1-eigvecs"

    basis = tmp_path / "basis.csv"
    basis.write_text("1.0\n0.0\n")
    out2 = tmp_path / "b2.json"
    assert main(["bound", ma, "--prior", prior2, "--basis", str(basis), "--out", str(out2)]) == 0
    assert json.loads(out2.read_text())["bound"] >= 0.0

    full = tmp_path / "full.csv"
    full.write_text("1.0,0.0\n0.0,1.0\n")
    out3 = tmp_path / "b3.json"
    assert main(["bound", ma, "--prior", prior2, "--basis", str(full), "--out", str(out3)]) == 0
    assert abs(json.loads(out3.read_text())["bound"]) <= 1e-10


def test_bound_argument_validation(tmp_path, prior2, fitted_pair, capsys):
    ma, _ = fitted_pair
    out = str(tmp_path / "b.json")
    assert main(["bound", ma, "--prior", prior2, "--out", out]) == 2
    assert main(["bound", ma, "--prior", prior2, "--r", "1", "--basis", "x.csv",
                 "--out", out]) == 2
    assert "exactly one" in capsys.readouterr().err
    assert main(["bound", ma, "--prior", prior2, "--r", "5", "--out", out]) == 1


# -- verify ------------------------------------------------------------------------------


def test_verify_poly_prints_lines_and_fails_honestly(tmp_path, capsys):
    out = tmp_path / "verify.json"
    code = main(["verify", "poly", "--out", str(out)])
    lines = [l for l in capsys.readouterr().out.splitlines() if l]
    assert code == 1  # the beta=-12 reference value cannot be reproduced
    assert sum(l.startswith("PASS") for l in lines) == 2
    assert sum(l.startswith("FAIL") for l in lines) == 1
    assert "beta=-12" in next(l for l in lines if l.startswith("FAIL"))
    rep = json.loads(out.read_text())
    assert [c["passed"] for c in rep["checks"]] == [True, True, False]


def test_verify_metric_passes(tmp_path, capsys):
    assert main(["verify", "metric", "--n", "6", "--seed", "2"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l]
    assert len(lines) == 4 and all(l.startswith("PASS") for l in lines)


# -- misc ---------------------------------------------------------------------------------


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "coactive" in capsys.readouterr().out
