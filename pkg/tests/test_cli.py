import shutil

import pytest

from bitshield.cli import main, read_secret
from bitshield.errors import BitshieldError

from conftest import DEMO


@pytest.fixture
def workspace(tmp_path):
    shutil.copy(DEMO / "students.json", tmp_path / "students.json")
    shutil.copy(DEMO / "students.csv", tmp_path / "students.csv")
    assert main(["keygen", "--out", str(tmp_path / "key")]) == 0
    return tmp_path


def load(ws):
    return main(["load", "--schema", str(ws / "students.json"), "--csv", str(ws / "students.csv"),
                 "--secret-file", str(ws / "key"), "--store", str(ws / "store")])


def query(ws, sql, *extra):
    return main([*extra, "query", "--store", str(ws / "store"), "--secret-file", str(ws / "key"), sql])


def test_define_prints_layout(capsys):
    assert main(["define", str(DEMO / "students.json")]) == 0
    out = capsys.readouterr().out
    assert "20 partitions, 1 reference word(s)" in out
    assert "reference0 & 524288" in out


def test_load_then_query(workspace, capsys):
    assert load(workspace) == 0
    assert "loaded 4 row(s)" in capsys.readouterr().out
    assert query(workspace, 'select Name from Students where Department = "Computer science"') == 0
    out = capsys.readouterr().out
    assert "Alice" in out and "candidates: 1/4 (25.0%)" in out
    assert query(workspace, 'select count(*) from Students where Rank = "senior"', "-v") == 0
    out = capsys.readouterr().out
    assert "decrypted cells: 0" in out and "cloud: SELECT COUNT(*)" in out


def test_explain_hides_plaintext(workspace, capsys):
    load(workspace)
    capsys.readouterr()
    assert main(["query", "--store", str(workspace / "store"), "--secret-file", str(workspace / "key"),
                 "--explain", 'select Name from Students where Department = "Math"']) == 0
    out = capsys.readouterr().out
    assert "reference0 & 2 > 0" in out and "Math" not in out and "Students" not in out


def test_store_directory_has_no_plaintext(workspace):
    load(workspace)
    text = "".join(p.read_text(encoding="utf-8") for p in (workspace / "store").glob("*.jsonl"))
    for word in ("Students", "Department"):
        assert word not in text
    assert b"Alice" not in (workspace / "store" / "catalog.sealed").read_bytes()


def test_wrong_secret_is_reported(workspace, capsys):
    load(workspace)
    (workspace / "other").write_text("00" * 32)
    rc = main(["query", "--store", str(workspace / "store"), "--secret-file", str(workspace / "other"),
               "select * from Students"])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_bad_csv_line_is_named(workspace, capsys):
    (workspace / "students.csv").write_text("ID,Name,Rank,Visa type,Department\n1,Bob,senior,H1,Math\n")
    assert load(workspace) == 2
    err = capsys.readouterr().err
    assert "line 2" in err and "H1" in err


def test_csv_columns_may_be_reordered(workspace, capsys):
    (workspace / "students.csv").write_text("Department,ID,Name,Rank,Visa type\nMath,7,Zed,senior,F2\n")
    assert load(workspace) == 0
    assert query(workspace, "select ID, Name from Students") == 0
    assert "Zed" in capsys.readouterr().out


def test_syntax_error_exit_code(workspace, capsys):
    load(workspace)
    assert query(workspace, "select from Students") == 2
    assert "offset 7" in capsys.readouterr().err


def test_bench_subcommand_writes_csv(tmp_path, capsys):
    out = tmp_path / "report.csv"
    rc = main(["bench", "--sizes", "150", "--queries-per-class", "3", "--seed", "2",
               "--classes", "1-clause,3-AND", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("size,class,queries") and len(lines) == 3
    assert main(["bench", "--sizes", "10", "--classes", "bogus"]) == 2


def test_read_secret_formats(tmp_path):
    (tmp_path / "raw").write_bytes(bytes(range(32)))
    (tmp_path / "hex").write_text(bytes(range(32)).hex() + "\n")
    (tmp_path / "bad").write_text("short")
    assert read_secret(tmp_path / "raw") == read_secret(tmp_path / "hex") == bytes(range(32))
    with pytest.raises(BitshieldError):
        read_secret(tmp_path / "bad")
