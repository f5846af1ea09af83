import json

import run_all_checks


def test_every_stage_succeeds(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert run_all_checks.run_all() == 0
    stdout = capsys.readouterr().out
    assert f"[{len(run_all_checks.STAGES)}/{len(run_all_checks.STAGES)}] Building critic dataset..." in stdout
    report = json.loads((tmp_path / "runs" / "demo" / "uplift.json").read_text(encoding="utf-8"))
    assert report["delta"] > 0
    assert (tmp_path / "runs" / "demo" / "datagen" / "dataset.jsonl").is_file()
