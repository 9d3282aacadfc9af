"""Conformance: emitted files satisfy the downstream format, four-by-five
mode yields exactly 20 views per (model, video), and the produced manifest
trains end-to-end through the downstream CLI."""

import warnings

import numpy as np
import pytest

from ptmvqa_extractor.cli import main as extract_main
from ptmvqa_extractor.extract import (ExtractConfig, ExtractError, extract,
                                      read_labels_csv)

from ptmvqa.cli import main as ptmvqa_main
from ptmvqa.feature_store import load_dataset, read_feature_file


def report(name):
    print(f"\nACCEPTANCE {name}: PASS")


FOUR_BY_FIVE = ExtractConfig(models=["stub-frame", "stub-clip"],
                             frames_per_clip=8, frame_interval=2,
                             view_mode="four-by-five", crop_size=64,
                             dataset_name="clips")


def test_extractor_conformance(clip_dataset, tmp_path):
    videos, labels_path, labels = clip_dataset
    out = tmp_path / "features"
    result = extract(videos, labels_path, FOUR_BY_FIVE, out)
    assert sorted(result.extracted) == sorted(labels)
    assert result.failed == [] and result.skipped_models == []

    # every emitted file passes the downstream reader's validation, with
    # no warnings, and carries exactly 20 views per video
    for model_id, dim in (("stub-frame", 7), ("stub-clip", 5)):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("error")
            table = read_feature_file(out / f"{model_id}.ptmf")
        assert caught == []
        assert table.dim == dim
        assert table.video_ids() == sorted(labels)
        for video_id in labels:
            assert table.views_of(video_id) == list(range(20))

    bundle = load_dataset(result.manifest_path)
    assert bundle.model_ids() == ["stub-frame", "stub-clip"]

    # the manifest trains end-to-end through the downstream CLI
    run_dir = tmp_path / "run"
    code = ptmvqa_main([
        "train", "--manifest", str(result.manifest_path),
        "--epochs", "2", "--batch-size", "4", "--k", "2",
        "--embed-dim", "4", "--hidden-dim", "6", "--warmup-epochs", "1",
        "--train-fraction", "0.67", "--seed", "0", "-o", str(run_dir)])
    assert code == 0
    assert (run_dir / "checkpoint.ptmc").exists()
    report("extractor conformance (format valid, 20 views, trains end-to-end)")


def test_single_center_mode_yields_one_view(clip_dataset, tmp_path):
    videos, labels_path, labels = clip_dataset
    config = ExtractConfig(models=["stub-frame"], frames_per_clip=8,
                           frame_interval=2, view_mode="single-center",
                           crop_size=64)
    result = extract(videos, labels_path, config, tmp_path / "f")
    table = read_feature_file(tmp_path / "f" / "stub-frame.ptmf")
    for video_id in labels:
        assert table.views_of(video_id) == [0]
    assert result.failed == []


def test_frame_outputs_are_averaged_per_view(clip_dataset, tmp_path):
    from helpers_clips import StubFrameBackbone
    from ptmvqa_extractor.video import decode_video, extract_views
    videos, labels_path, _ = clip_dataset
    config = ExtractConfig(models=["stub-frame"], frames_per_clip=8,
                           frame_interval=2, view_mode="single-center",
                           crop_size=64)
    extract(videos, labels_path, config, tmp_path / "f")
    table = read_feature_file(tmp_path / "f" / "stub-frame.ptmf")
    frames = decode_video(videos / "clipA.mp4")
    view = extract_views(frames, 8, 2, "single-center", 64)[0]
    expected = StubFrameBackbone().embed_frames(view).mean(axis=0)
    assert np.allclose(table.entries[("clipA", 0)],
                       expected.astype(np.float32), atol=1e-7)


def test_undecodable_video_skipped_with_warning(clip_dataset, tmp_path):
    videos, labels_path, labels = clip_dataset
    (videos / "clipD.mp4").write_bytes(b"not a real video")
    with open(labels_path, "a") as fh:
        fh.write("clipD,2.0\n")
    with pytest.warns(RuntimeWarning, match="clipD"):
        result = extract(videos, labels_path, FOUR_BY_FIVE, tmp_path / "f")
    assert result.failed == ["clipD"]
    assert sorted(result.extracted) == sorted(labels)


def test_all_videos_failing_is_an_error(tmp_path):
    videos = tmp_path / "videos"
    videos.mkdir()
    (videos / "a.mp4").write_bytes(b"junk")
    labels = tmp_path / "mos.csv"
    labels.write_text("a,3.0\n")
    with pytest.warns(RuntimeWarning):
        with pytest.raises(ExtractError, match="failed to decode"):
            extract(videos, labels, FOUR_BY_FIVE, tmp_path / "f")


def test_unavailable_backbone_skipped_not_substituted(clip_dataset, tmp_path):
    videos, labels_path, _ = clip_dataset
    config = ExtractConfig(models=["x3d", "stub-frame"], frames_per_clip=8,
                           frame_interval=2, view_mode="single-center",
                           crop_size=64)
    with pytest.warns(RuntimeWarning, match="x3d"):
        result = extract(videos, labels_path, config, tmp_path / "f")
    assert result.skipped_models == ["x3d"]
    assert (tmp_path / "f" / "stub-frame.ptmf").exists()
    assert not (tmp_path / "f" / "x3d.ptmf").exists()


def test_no_loadable_backbones_is_an_error(clip_dataset, tmp_path):
    videos, labels_path, _ = clip_dataset
    config = ExtractConfig(models=["x3d"], view_mode="single-center")
    with pytest.warns(RuntimeWarning):
        with pytest.raises(ExtractError, match="none of the requested"):
            extract(videos, labels_path, config, tmp_path / "f")


def test_labels_csv_parsing(tmp_path):
    path = tmp_path / "mos.csv"
    path.write_text("video_id,mos\na,1.5\nb,4.0\n")
    assert read_labels_csv(path) == {"a": 1.5, "b": 4.0}
    path.write_text("a,1.5\nb,not-a-number\n")
    with pytest.raises(ExtractError, match="not a number"):
        read_labels_csv(path)


class TestCli:
    def test_end_to_end(self, clip_dataset, tmp_path, capsys):
        videos, labels_path, _ = clip_dataset
        code = extract_main(["--videos", str(videos), "--labels",
                             str(labels_path), "--models",
                             "stub-frame,stub-clip", "--frames", "8",
                             "--interval", "2", "--view-mode", "four-by-five",
                             "--crop", "64", "-o", str(tmp_path / "out")])
        assert code == 0
        assert "extracted 3 videos" in capsys.readouterr().out
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_list_models(self, capsys):
        assert extract_main(["--list-models"]) == 0
        out = capsys.readouterr().out
        for name in ("convnext", "swin-b", "vit-b", "video-swin-b",
                     "stub-frame"):
            assert name in out

    def test_missing_required_args(self, capsys):
        assert extract_main([]) == 1
        capsys.readouterr()

    def test_data_error_exit_code(self, tmp_path, capsys):
        videos = tmp_path / "videos"
        videos.mkdir()
        labels = tmp_path / "mos.csv"
        labels.write_text("a,3.0\n")
        code = extract_main(["--videos", str(videos), "--labels", str(labels),
                             "--models", "stub-frame", "-o",
                             str(tmp_path / "out")])
        assert code == 2
        capsys.readouterr()
