import json
import re

import pytest

from conftest import FIXTURES, ROOT, TRANSCRIPT, replay_run
from fakeworld import judge_xml
from figreport.cli import main
from figreport.config import ConfigError, load_config
from figreport.evidence import dedup_key, parse_outline, render_outline
from figreport.gateway.mock import TRANSCRIPT_SCHEMA


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("default")
    return out, replay_run(out)


def test_report_written_with_audit(default_run):
    out, path = default_run
    report = path.read_text()
    audit = json.loads((out / "run.json").read_text())
    assert report.startswith("# ") and "## Contents" in report and "## References" in report
    assert audit["media_elements"] == len(audit["anchors"]) > 0
    assert "MEDIA_ANCHOR" not in report and "CHART_PENDING" not in report
    assert not re.search(r"\[Image_\d+", report)


def test_source_figures_unique(default_run):
    _, path = default_run
    urls = [u for u in re.findall(r"!\[[^\]]*\]\(([^)]+)\)", path.read_text()) if u.startswith("http")]
    assert urls and len({dedup_key(u) for u in urls}) == len(urls)


def test_outline_file_round_trips(default_run):
    out, _ = default_run
    text = (out / "outline.md").read_text()
    assert render_outline(parse_outline(text)) == text


def test_chart_rendered(default_run):
    out, path = default_run
    audit = json.loads((out / "run.json").read_text())
    (chart,) = audit["charts"].values()
    assert chart["forced_regenerations"] == 1
    assert (out / chart["png"]).exists() and chart["html"] in path.read_text()


def test_disable_enrichment_recorded(tmp_path):
    replay_run(tmp_path, disable_enrichment=True)
    assert json.loads((tmp_path / "enrichment_report.json").read_text())["bypassed"] is True
    assert json.loads((tmp_path / "run.json").read_text())["ablations"]["disable_enrichment"] is True


def test_global_generation_writes_no_sections(tmp_path):
    replay_run(tmp_path, global_generation=True)
    assert not (tmp_path / "sections").exists() or not list((tmp_path / "sections").glob("sec_*.md"))
    assert (tmp_path / "report.md").exists()


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        replay_run(blocker / "sub")


# -- config --------------------------------------------------------------------------------------


def test_config_from_fixture():
    cfg = load_config(FIXTURES / "run.yaml", output_dir="x")
    assert cfg.cache is False and cfg.chart_workers == 2 and str(cfg.output_dir) == "x"


@pytest.mark.parametrize(
    "text",
    ["topic: t\nbogus: 1\n", "topic: t\nresearch: {rounds: many}\n", "topic: t\ncache: 3\n", "- a\n- b\n", "topic: ''\n", "a: [\n"],
)
def test_config_errors(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_overrides_set_ablations():
    cfg = load_config(None, topic="t", global_generation=True)
    assert cfg.ablations.global_generation and not cfg.ablations.disable_enrichment


# -- CLI -------------------------------------------------------------------------------------------


def test_cli_run(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(ROOT)
    code = main(["run", "--config", str(FIXTURES / "run.yaml"), "--output-dir", str(tmp_path), "--no-enrichment"])
    assert code == 0
    assert capsys.readouterr().out.strip() == str(tmp_path / "report.md")
    assert json.loads((tmp_path / "run.json").read_text())["ablations"]["disable_enrichment"] is True


def test_cli_reports_missing_topic(capsys):
    assert main(["run", "--mock-transcript", str(TRANSCRIPT)]) == 1
    assert "topic" in capsys.readouterr().err


def test_cli_judge(tmp_path, capsys):
    bundle = tmp_path / "bundles" / "a"
    bundle.mkdir(parents=True)
    (bundle / "report.md").write_text("# r\n")
    (bundle / "topic.txt").write_text("t\n")
    transcript = tmp_path / "judge.json"
    transcript.write_text(json.dumps({"schema": TRANSCRIPT_SCHEMA, "chat_by_template": {"judge_single": judge_xml(4, 4, 4, 4, 4)}}))
    code = main(["judge", "--bundles", str(tmp_path / "bundles"), "--mock-transcript", str(transcript), "--out", str(tmp_path / "o")])
    assert code == 0, capsys.readouterr().err
    assert (tmp_path / "o" / "scores.csv").read_text().splitlines()[1].startswith("a,1,4.0")
