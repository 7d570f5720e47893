import json

import jsonschema

from vpharm.cli import main
from vpharm.experiments import report_schema

SQUARE = {"type": "rectangle", "lo": [0, 0], "hi": [1, 1]}


def write(tmp_path, **doc):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_pmean(capsys):
    assert main(["pmean", "--p", "2", "--values", "1,2,3"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "2"
    assert main(["pmean", "--p", "inf", "--values", "0,10,4"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "5"


def test_pmean_weights_file(tmp_path, capsys):
    (tmp_path / "v.csv").write_text("0\n1\n")
    assert main(["pmean", "--p", "2", "--values", str(tmp_path / "v.csv"), "--weights", "3,1"]) == 0
    assert float(capsys.readouterr().out.splitlines()[0]) == 0.25


def test_pmean_bad_input(capsys):
    assert main(["pmean", "--p", "0.5", "--values", "1,2"]) == 2
    assert main(["pmean", "--p", "2", "--values", "a,b"]) == 2


def test_usage_error_prints_schema(capsys):
    try:
        main(["frobnicate"])
    except SystemExit as exc:
        assert exc.code == 2
    assert "config JSON" in capsys.readouterr().err


def test_solve_constant(tmp_path):
    cfg = write(tmp_path, domain=SQUARE, p=[3], eps=[0.2], h=[0.1], data="constant(2)", out=str(tmp_path / "o"))
    assert main(["solve", "--config", cfg]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    jsonschema.validate(rep, report_schema())
    assert rep["iterations"] <= 2 and rep["converged"]
    header = (tmp_path / "o" / "solution.csv").read_text().splitlines()[0]
    assert header == "x,y,u"


def test_solve_not_converged(tmp_path):
    cfg = write(tmp_path, domain=SQUARE, p=[2], eps=[0.2], h=[0.1], data="harmonic", max_iters=2,
                out=str(tmp_path / "o"))
    assert main(["solve", "--config", cfg]) == 3
    assert not json.loads((tmp_path / "o" / "report.json").read_text())["converged"]


def test_config_error(tmp_path):
    cfg = write(tmp_path, domain=SQUARE, p=[2], eps=[0.9], h=[0.1], data="harmonic")
    assert main(["solve", "--config", cfg]) == 2
    assert main(["amvp", "--config", str(tmp_path / "nope.json")]) == 2


def test_amvp_and_converge(tmp_path):
    cfg = write(tmp_path, domain=SQUARE, p=[2, 3], eps=[0.2, 0.1], h=[1 / 16], data="affine",
                out=str(tmp_path / "o"), threads=1)
    assert main(["amvp", "--config", cfg]) == 0
    assert main(["converge", "--config", cfg]) == 0
    assert (tmp_path / "o" / "amvp.csv").read_text().startswith("p,eps,point_id,ratio,target,abs_err\n")
    assert (tmp_path / "o" / "convergence.csv").read_text().startswith("p,eps,h,sup_error,iters,seconds\n")


def test_outputs_are_deterministic(tmp_path):
    doc = {"domain": SQUARE, "p": [1.5], "eps": [0.2], "h": [1 / 16], "data": "quadratic", "points": 5}
    for k, threads in enumerate((1, None)):
        d = dict(doc, out=str(tmp_path / f"o{k}"))
        if threads:
            d["threads"] = threads
        assert main(["amvp", "--config", write(tmp_path, **d)]) == 0
    assert (tmp_path / "o0" / "amvp.csv").read_bytes() == (tmp_path / "o1" / "amvp.csv").read_bytes()
