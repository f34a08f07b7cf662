"""Corpus runs: ingest, config loading, partial failure, output bundle."""

import json
import shutil

import pytest

from broadsheet import (
    ConfigError,
    EmptyCorpus,
    RunConfig,
    ingest_corpus,
    load_run_config,
    run_pipelines,
    write_run_outputs,
)
from broadsheet.pipeline import exit_code_for
from conftest import MODELS, build_mini_corpus


def _config(corpus, out, pipelines=("fullpage", "fusion") + MODELS, **kw):
    return RunConfig(
        corpus=corpus,
        out=out,
        vocabulary=corpus / "vocab.txt",
        pipelines=tuple(pipelines),
        figures=False,
        **kw,
    )


class TestIngestCorpus:
    def test_pages_sorted_with_all_files(self, mini_corpus):
        entries = ingest_corpus(mini_corpus)
        assert [e.page_id for e in entries] == sorted(e.page_id for e in entries)
        assert len(entries) == 5
        for e in entries:
            assert set(e.detections) == set(MODELS)
            assert e.ground_truth is not None

    def test_models_inferred_from_directories(self, mini_corpus):
        entries = ingest_corpus(mini_corpus, models=())
        assert set(entries[0].detections) == set(MODELS)

    def test_missing_detection_file_absent_from_entry(self, tmp_path):
        corpus = tmp_path / "corpus"
        build_mini_corpus(corpus, pages=2)
        victim = next((corpus / "detections" / MODELS[0]).glob("*.txt"))
        page_id = victim.stem
        victim.unlink()
        entries = ingest_corpus(corpus)
        by_id = {e.page_id: e for e in entries}
        assert MODELS[0] not in by_id[page_id].detections
        assert MODELS[1] in by_id[page_id].detections

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(EmptyCorpus):
            ingest_corpus(tmp_path)


class TestRunConfig:
    def test_reserved_names_excluded_from_source_models(self, tmp_path):
        cfg = _config(tmp_path, tmp_path / "out")
        assert cfg.source_models() == MODELS

    def test_extra_fusion_sources_added(self, tmp_path):
        cfg = _config(tmp_path, tmp_path / "out", pipelines=("fullpage", "fusion"),
                      fusion_sources=("modelX",))
        assert cfg.source_models() == ("modelX",)
        assert cfg.effective_fusion_sources() == ("modelX",)

    def test_fusion_without_sources_rejected(self, tmp_path):
        cfg = _config(tmp_path, tmp_path / "out", pipelines=("fullpage", "fusion"))
        with pytest.raises(ConfigError):
            cfg.effective_fusion_sources()

    def test_duplicate_pipelines_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            _config(tmp_path, tmp_path / "out", pipelines=("fullpage", "fullpage"))

    def test_zero_workers_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            _config(tmp_path, tmp_path / "out", workers=0)


class TestLoadRunConfig:
    def _write(self, tmp_path, body):
        path = tmp_path / "run.json"
        path.write_text(json.dumps(body))
        return path

    def _body(self, **extra):
        body = {"corpus": "corpus", "out": "out", "vocabulary": "vocab.txt"}
        body.update(extra)
        return body

    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        path = self._write(tmp_path, self._body())
        cfg = load_run_config(path)
        assert cfg.corpus == tmp_path / "corpus"
        assert cfg.out == tmp_path / "out"
        assert cfg.vocabulary == tmp_path / "vocab.txt"

    def test_nested_configs_constructed(self, tmp_path):
        body = self._body(
            fusion={"iou_threshold": 0.6},
            window={"strip_height": 200},
            augment={"variants_per_element": 7},
        )
        cfg = load_run_config(self._write(tmp_path, body))
        assert cfg.fusion.iou_threshold == 0.6
        assert cfg.fusion.duplicate_iou_threshold == 0.9  # default retained
        assert cfg.window.strip_height == 200
        assert cfg.augment.variants_per_element == 7

    def test_seed_loaded_and_overridable(self, tmp_path):
        path = self._write(tmp_path, self._body(seed=9))
        assert load_run_config(path).seed == 9
        assert load_run_config(path, seed=12).seed == 12

    def test_unknown_key_rejected(self, tmp_path):
        path = self._write(tmp_path, self._body(typo_key=1))
        with pytest.raises(ConfigError, match="typo_key"):
            load_run_config(path)

    def test_overrides_win(self, tmp_path):
        path = self._write(tmp_path, self._body(workers=1))
        cfg = load_run_config(path, workers=4, out=tmp_path / "elsewhere")
        assert cfg.workers == 4
        assert cfg.out == tmp_path / "elsewhere"

    def test_none_override_ignored(self, tmp_path):
        path = self._write(tmp_path, self._body(workers=2))
        assert load_run_config(path, workers=None).workers == 2

    def test_missing_required_key_rejected(self, tmp_path):
        path = self._write(tmp_path, {"corpus": "c", "out": "o"})
        with pytest.raises(ConfigError, match="vocabulary"):
            load_run_config(path)

    def test_malformed_json_rejected(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_bad_nested_value_rejected(self, tmp_path):
        path = self._write(tmp_path, self._body(fusion={"iou_threshold": -1}))
        with pytest.raises(ConfigError):
            load_run_config(path)


class TestRunPipelines:
    def test_clean_run_covers_every_pipeline_page_pair(self, mini_corpus, tmp_path):
        cfg = _config(mini_corpus, tmp_path / "out")
        result = run_pipelines(cfg)
        assert not result.errors and not result.skips
        assert len(result.records) == 5 * len(cfg.pipelines)
        assert exit_code_for(result) == 0

    def test_missing_model_file_skips_dependents(self, mini_corpus, tmp_path):
        corpus = tmp_path / "corpus"
        shutil.copytree(mini_corpus, corpus)
        victim = sorted((corpus / "detections" / MODELS[1]).glob("*.txt"))[0]
        page_id = victim.stem
        victim.unlink()

        result = run_pipelines(_config(corpus, tmp_path / "out"))
        assert exit_code_for(result) == 0  # skips are not failures
        skipped = {(p, pl) for p, pl, _ in result.skips}
        assert (page_id, MODELS[1]) in skipped
        assert (page_id, "fusion") in skipped
        assert len(result.skips) == 2
        produced = {(r.page_id, r.pipeline_id) for r in result.records}
        assert (page_id, "fullpage") in produced
        assert (page_id, MODELS[0]) in produced

    def test_corrupt_detection_file_fails_dependents_only(self, mini_corpus, tmp_path):
        corpus = tmp_path / "corpus"
        shutil.copytree(mini_corpus, corpus)
        victim = sorted((corpus / "detections" / MODELS[1]).glob("*.txt"))[0]
        page_id = victim.stem
        victim.write_text("0 0.5 0.5\n")  # wrong field count

        result = run_pipelines(_config(corpus, tmp_path / "out"))
        assert exit_code_for(result) == 2
        failed = {(p, pl) for p, pl, _ in result.errors}
        assert failed == {(page_id, MODELS[1]), (page_id, "fusion")}
        produced = {(r.page_id, r.pipeline_id) for r in result.records}
        assert (page_id, "fullpage") in produced
        assert (page_id, MODELS[0]) in produced

    def test_corrupt_image_fails_whole_page(self, mini_corpus, tmp_path):
        corpus = tmp_path / "corpus"
        shutil.copytree(mini_corpus, corpus)
        victim = sorted((corpus / "pages").glob("*.png"))[0]
        page_id = victim.stem
        victim.write_bytes(b"not a png")

        cfg = _config(corpus, tmp_path / "out")
        result = run_pipelines(cfg)
        assert exit_code_for(result) == 2
        failed = {(p, pl) for p, pl, _ in result.errors}
        assert failed == {(page_id, pl) for pl in cfg.pipelines}
        assert not any(r.page_id == page_id for r in result.records)

    def test_missing_vocabulary_rejected(self, mini_corpus, tmp_path):
        cfg = RunConfig(
            corpus=mini_corpus,
            out=tmp_path / "out",
            vocabulary=tmp_path / "absent.txt",
            pipelines=("fullpage",),
        )
        with pytest.raises(ConfigError):
            run_pipelines(cfg)

    def test_every_page_failing_raises_empty_corpus(self, mini_corpus, tmp_path):
        corpus = tmp_path / "corpus"
        shutil.copytree(mini_corpus, corpus)
        for png in (corpus / "pages").glob("*.png"):
            png.write_bytes(b"broken")
        with pytest.raises(EmptyCorpus):
            run_pipelines(_config(corpus, tmp_path / "out"))


class TestWriteRunOutputs:
    def test_bundle_contents_and_error_rows(self, mini_corpus, tmp_path):
        corpus = tmp_path / "corpus"
        shutil.copytree(mini_corpus, corpus)
        victim = sorted((corpus / "detections" / MODELS[2]).glob("*.txt"))[0]
        victim.write_text("9 0.5 0.5 0.1 0.1\n")  # bad class index

        out = tmp_path / "out"
        cfg = _config(corpus, out)
        result = run_pipelines(cfg)
        emitted = write_run_outputs(result, cfg)

        assert (out / "per_page.csv").is_file()
        assert (out / "aggregate.csv").is_file()
        assert (out / "errors.csv").is_file()
        for transcript in result.transcripts:
            path = out / "transcripts" / transcript.pipeline_id / f"{transcript.page_id}.json"
            assert path.is_file()

        rows = (out / "errors.csv").read_text().splitlines()
        assert rows[0] == "page_id,pipeline,kind,message"
        kinds = {line.split(",")[2] for line in rows[1:]}
        assert kinds == {"error"}
        assert emitted["errors"] == out / "errors.csv"

    def test_clean_run_writes_header_only_errors_csv(self, mini_corpus, tmp_path):
        out = tmp_path / "out"
        cfg = _config(mini_corpus, out, pipelines=("fullpage",))
        result = run_pipelines(cfg)
        write_run_outputs(result, cfg)
        assert (out / "errors.csv").read_text().splitlines() == [
            "page_id,pipeline,kind,message"
        ]
