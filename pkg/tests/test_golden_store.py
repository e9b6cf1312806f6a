"""Byte-level container compliance against the shared golden fixture."""

import numpy as np

from fsar.data import ClassInfo, EmbeddingStore, Manifest, VideoInfo, read_store, write_store

import golden_store as G


def golden_manifest():
    return Manifest(
        classes=[ClassInfo(0, G.CLASS_NAME)],
        videos=[VideoInfo(G.VIDEO_ID, 0, "test")],
        frames_per_video=G.T,
        channels=G.C,
        templates_per_class=G.R,
        splits={"train": [], "val": [], "test": [0]},
    )


def test_writer_reproduces_golden_bytes(tmp_path):
    store = EmbeddingStore(frames={G.VIDEO_ID: G.FRAMES}, prompts={0: G.PROMPTS})
    paths = (tmp_path / "f.fse1", tmp_path / "p.fsp1", tmp_path / "m.json")
    write_store(golden_manifest(), store, *paths)
    assert paths[0].read_bytes() == bytes.fromhex(G.FRAME_HEX)
    assert paths[1].read_bytes() == bytes.fromhex(G.PROMPT_HEX)


def test_reader_parses_golden_bytes(tmp_path):
    (tmp_path / "f.fse1").write_bytes(bytes.fromhex(G.FRAME_HEX))
    (tmp_path / "p.fsp1").write_bytes(bytes.fromhex(G.PROMPT_HEX))
    import json

    (tmp_path / "m.json").write_text(json.dumps(golden_manifest().to_dict()))
    manifest, store = read_store(
        tmp_path / "f.fse1", tmp_path / "p.fsp1", tmp_path / "m.json"
    )
    np.testing.assert_array_equal(store.frames[G.VIDEO_ID], G.FRAMES)
    np.testing.assert_array_equal(store.prompts[0], G.PROMPTS)
    assert manifest.frames_per_video == G.T
