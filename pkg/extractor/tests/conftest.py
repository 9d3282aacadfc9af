import pytest

from helpers_clips import register_stubs, write_clip

register_stubs()


@pytest.fixture
def clip_dataset(tmp_path):
    """Three labeled clips (generated on the fly, so genuinely free)."""
    videos = tmp_path / "videos"
    videos.mkdir()
    labels = {"clipA": 1.5, "clipB": 3.0, "clipC": 4.5}
    for i, (name, blur) in enumerate((("clipA", 9), ("clipB", 3), ("clipC", 0))):
        write_clip(videos / f"{name}.mp4", seed=i, blur=blur)
    labels_path = tmp_path / "mos.csv"
    labels_path.write_text("video_id,mos\n" + "".join(
        f"{k},{v}\n" for k, v in labels.items()))
    return videos, labels_path, labels
