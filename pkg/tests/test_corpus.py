"""
資料層：RT1 / PNM 解碼、清單驗證、標籤比例子集與合成資料集
"""

import json
from pathlib import Path

import numpy as np
import pytest

from autodiff import Tensor, decode_rt1, encode_rt1, save_rt1
from corpus import (
    Split,
    SyntheticCorpusSpec,
    TaskKind,
    decode_image,
    decode_image_array,
    encode_pnm,
    generate_synthetic_corpus,
    load_manifest,
    plan_label_fraction,
    subset_by_fraction,
    write_image,
)
from corpus.images import decode_pnm
from errors import (
    ConfigError,
    ImageDecodeError,
    ManifestParseError,
    ManifestValidationError,
)


def write_manifest(path, records, meta=None):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    if meta is not None:
        path.with_name(f"{path.stem}.meta.json").write_text(json.dumps(meta), encoding="utf-8")
    return path


@pytest.fixture
def image_dir(tmp_path):
    for name in ("a", "b", "c", "d", "e", "f"):
        write_image(tmp_path / f"{name}.ppm", np.full((3, 4, 4), 0.5))
    return tmp_path


class TestRT1:
    def test_encode_layout(self):
        payload = encode_rt1(np.arange(6, dtype=np.float32).reshape(2, 3))
        assert payload[:4] == b"RT1\x00"
        assert len(payload) == 4 + 2 + 2 * 8 + 6 * 4

    def test_decode_restores_values(self):
        array = np.linspace(0, 1, 12).reshape(3, 2, 2)
        decoded, end = decode_rt1(encode_rt1(array))
        np.testing.assert_array_equal(decoded, array)
        assert decoded.dtype == np.float64
        assert end == len(encode_rt1(array))

    def test_truncated_payload(self):
        with pytest.raises(ImageDecodeError):
            decode_rt1(encode_rt1(np.ones((4, 4)))[:-3])

    def test_bad_magic(self):
        with pytest.raises(ImageDecodeError):
            decode_rt1(b"XXXX" + b"\x00" * 10)


class TestImages:
    def test_zero_pgm(self):
        payload = b"P5\n2 2\n255\n" + bytes(4)
        np.testing.assert_array_equal(decode_pnm(payload), np.zeros((1, 2, 2)))

    def test_red_ppm_pixel(self):
        pixel = decode_pnm(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        np.testing.assert_array_equal(pixel.ravel(), [1.0, 0.0, 0.0])

    def test_eight_bit_rescale(self):
        value = decode_pnm(b"P5\n1 1\n255\n" + bytes([128]))
        assert value.item() == pytest.approx(128 / 255)

    def test_header_comments(self):
        payload = b"P5\n# written by hand\n1 1\n255\n" + bytes([255])
        assert decode_pnm(payload).item() == 1.0

    def test_decode_image_tensor(self, tmp_path):
        path = tmp_path / "px.ppm"
        path.write_bytes(b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 128, 0]))
        image = decode_image(path)
        assert isinstance(image, Tensor)
        assert image.shape == (3, 1, 2)
        np.testing.assert_allclose(image.data[:, 0, 0], [1.0, 0.0, 0.0])
        assert image.data[1, 0, 1] == pytest.approx(128 / 255)

    def test_unsupported_format(self, tmp_path):
        path = tmp_path / "img.png"
        path.write_bytes(b"\x89PNG\r\n\x1a\n")
        with pytest.raises(ImageDecodeError):
            decode_image_array(path)

    def test_rt1_out_of_range(self, tmp_path):
        path = tmp_path / "img.rt1"
        save_rt1(path, np.full((1, 2, 2), 1.5))
        with pytest.raises(ImageDecodeError):
            decode_image_array(path)

    def test_pnm_encoding_is_stable(self, tmp_path):
        image = np.random.default_rng(0).uniform(0, 1, (3, 5, 4))
        path = write_image(tmp_path / "x.ppm", image)
        decoded = decode_image_array(path)
        assert decoded.shape == (3, 5, 4)
        assert encode_pnm(decoded) == path.read_bytes()


class TestManifest:
    def test_two_line_file(self, image_dir):
        path = write_manifest(image_dir / "m.jsonl", [
            {"bag_id": "p1", "images": ["a.ppm"], "label": 0, "split": "train"},
            {"bag_id": "p2", "images": ["b.ppm", "c.ppm"], "label": 1, "split": "test",
             "group": "site_a"},
        ])
        manifest = load_manifest(path)
        assert len(manifest.bags) == 2
        assert manifest.get("p2").M == 2
        assert manifest.get("p2").group == "site_a"
        assert manifest.task_kind == TaskKind.MULTICLASS
        assert manifest.image_size == (4, 4)

    def test_six_image_bag(self, image_dir):
        images = [f"{n}.ppm" for n in "abcdef"]
        path = write_manifest(image_dir / "m.jsonl", [
            {"bag_id": "p1", "images": images, "label": 0, "split": "train"}])
        assert load_manifest(path).get("p1").M == 6

    def test_duplicate_bag_id(self, image_dir):
        record = {"bag_id": "p1", "images": ["a.ppm"], "label": 0, "split": "train"}
        path = write_manifest(image_dir / "m.jsonl", [record, record])
        with pytest.raises(ManifestValidationError, match="p1"):
            load_manifest(path)

    def test_split_overlap(self, image_dir):
        path = write_manifest(image_dir / "m.jsonl", [
            {"bag_id": "p1", "images": ["a.ppm"], "label": 0, "split": "train"},
            {"bag_id": "p1", "images": ["b.ppm"], "label": 0, "split": "test"},
        ])
        with pytest.raises(ManifestValidationError):
            load_manifest(path)

    def test_parse_error_reports_line(self, image_dir):
        path = image_dir / "m.jsonl"
        path.write_text('{"bag_id": "p1", "images": ["a.ppm"], "label": 0, "split": "train"}\n'
                        '{not json\n', encoding="utf-8")
        with pytest.raises(ManifestParseError) as info:
            load_manifest(path)
        assert info.value.line_number == 2

    def test_unknown_field(self, image_dir):
        path = write_manifest(image_dir / "m.jsonl", [
            {"bag_id": "p1", "images": ["a.ppm"], "label": 0, "split": "train", "age": 40}])
        with pytest.raises(ManifestParseError):
            load_manifest(path)

    def test_missing_image(self, image_dir):
        path = write_manifest(image_dir / "m.jsonl", [
            {"bag_id": "p1", "images": ["missing.ppm"], "label": 0, "split": "train"}])
        with pytest.raises(ManifestValidationError):
            load_manifest(path)

    def test_mixed_label_kinds(self, image_dir):
        path = write_manifest(image_dir / "m.jsonl", [
            {"bag_id": "p1", "images": ["a.ppm"], "label": 0, "split": "train"},
            {"bag_id": "p2", "images": ["b.ppm"], "label": [0, 1], "split": "train"},
        ])
        with pytest.raises(ManifestValidationError):
            load_manifest(path)

    def test_multilabel_with_meta(self, image_dir):
        path = write_manifest(image_dir / "m.jsonl", [
            {"bag_id": "p1", "images": ["a.ppm"], "label": [1, 0, 1], "split": "train"}],
            meta={"class_names": ["x", "y", "z"], "image_size": [4, 4]})
        manifest = load_manifest(path)
        assert manifest.task_kind == TaskKind.MULTILABEL
        assert manifest.class_names == ("x", "y", "z")

    def test_save_then_load(self, tiny_corpus, tmp_path):
        copy_path = tiny_corpus.save(tmp_path / "copy.jsonl")
        reloaded = load_manifest(copy_path)
        assert reloaded.bag_ids == tiny_corpus.bag_ids
        assert reloaded.class_names == tiny_corpus.class_names


class TestLabelFraction:
    def test_full_fraction_is_identity(self, tiny_corpus):
        assert subset_by_fraction(tiny_corpus, 1.0, 3) is tiny_corpus

    def test_ceiling_per_class(self, tiny_corpus):
        # 每類 6 個訓練 bag：⌈0.1·6⌉ = 1
        subset = subset_by_fraction(tiny_corpus, 0.1, 3)
        labels = [bag.label for bag in subset.split(Split.TRAIN)]
        assert sorted(labels) == [0, 1, 2]

    def test_validation_and_test_untouched(self, tiny_corpus):
        subset = subset_by_fraction(tiny_corpus, 0.2, 3)
        for split in (Split.VALIDATION, Split.TEST):
            assert subset.split(split) == tiny_corpus.split(split)

    def test_deterministic(self, tiny_corpus):
        assert plan_label_fraction(tiny_corpus, 0.5, 9) == plan_label_fraction(tiny_corpus, 0.5, 9)

    def test_nested(self, tiny_corpus):
        small = set(plan_label_fraction(tiny_corpus, 0.2, 5).selected_bag_ids)
        large = set(plan_label_fraction(tiny_corpus, 0.6, 5).selected_bag_ids)
        assert small <= large

    @pytest.mark.parametrize("fraction", [0.0, 1.5, -0.1])
    def test_out_of_range(self, tiny_corpus, fraction):
        with pytest.raises(ConfigError):
            plan_label_fraction(tiny_corpus, fraction, 0)


class TestSyntheticCorpus:
    def test_sizes(self, tiny_corpus):
        assert len(tiny_corpus.bags) == 30
        assert all(1 <= bag.M <= 3 for bag in tiny_corpus.bags)
        assert tiny_corpus.split_counts() == {"train": 18, "validation": 6, "test": 6}

    def test_byte_identical(self, tmp_path):
        spec = SyntheticCorpusSpec(num_classes=2, bags_per_class=3, image_size=(8, 8), seed=7)
        first = generate_synthetic_corpus(spec, tmp_path / "a")
        generate_synthetic_corpus(spec, tmp_path / "b")
        for bag in first.bags:
            for ref in bag.image_refs:
                relative = Path(ref).relative_to(tmp_path / "a")
                assert (tmp_path / "a" / relative).read_bytes() == (tmp_path / "b" / relative).read_bytes()
        assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == \
            (tmp_path / "b" / "manifest.jsonl").read_bytes()

    def test_multilabel_labels_include_own_class(self, tiny_multilabel_corpus):
        assert tiny_multilabel_corpus.task_kind == TaskKind.MULTILABEL
        for bag in tiny_multilabel_corpus.bags:
            own = int(bag.bag_id[1:3])
            assert bag.label[own] == 1

    def test_unknown_spec_field(self):
        with pytest.raises(ConfigError):
            SyntheticCorpusSpec.from_dict({"num_classes": 3, "colour": "red"})
