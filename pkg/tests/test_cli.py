import csv
import json
import re

import numpy as np
import pytest

from softlab import cli, labels
from softlab.nnet import init_network, save_model
from softlab.plots import CLASS_COLORS, hex_color
from softlab.synth import read_dataset


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def dataset(workdir):
    path = workdir / "d.sld"
    assert cli.main(["generate", "--out", str(path), "--count", "60", "--seed", "5", "--size", "16"]) == 0
    return path


@pytest.fixture(scope="module")
def model(workdir, dataset):
    out = workdir / "m.slm"
    argv = ["train", "--dataset", str(dataset), "--epochs", "2", "--batch", "16", "--seed", "1", "--out", str(out)]
    assert cli.main(argv) == 0
    return out


def test_generate_count_100(tmp_path):
    a, b = tmp_path / "a.sld", tmp_path / "b.sld"
    for path in (a, b):
        assert cli.main(["generate", "--out", str(path), "--count", "100", "--size", "16"]) == 0
    assert np.bincount(read_dataset(a).splits).tolist() == [60, 20, 20]
    assert a.read_bytes() == b.read_bytes()
    manifest = json.loads((tmp_path / "a.sld.manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["count"] == 100


def test_generate_bad_fractions(tmp_path):
    code = cli.main(["generate", "--out", str(tmp_path / "x.sld"), "--count", "10", "--split", "0.5,0.2,0.2"])
    assert code == 3


def test_annotate(tmp_path, dataset):
    out = tmp_path / "ann.csv"
    assert cli.main(["annotate", "--dataset", str(dataset), "--annotators", "7", "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["item_index", "annotator_index", "class_index"]
    assert len(rows) == 1 + 60 * 7
    sets = labels.read_annotations(out, 6)
    truth = read_dataset(dataset).labels
    # annotators only ever pick classes with ground-truth mass
    for i, s in enumerate(sets):
        assert all(truth[i, c] > 0 for c in s.classes)


def test_train_log_has_one_row_per_epoch(workdir, model):
    rows = _rows(f"{model}.log.csv")
    assert len(rows) == 1 + 2
    assert [int(r[0]) for r in rows[1:]] == [1, 2]


def test_train_sim_soft_with_annotation_table(tmp_path, dataset):
    ann = tmp_path / "ann.csv"
    cli.main(["annotate", "--dataset", str(dataset), "--out", str(ann)])
    out = tmp_path / "sim.slm"
    argv = ["train", "--dataset", str(dataset), "--labels", "sim-soft", "--annotations", str(ann)]
    assert cli.main(argv + ["--epochs", "1", "--batch", "32", "--out", str(out)]) == 0
    assert out.exists()


def test_train_annotations_need_sim_mode(tmp_path, dataset):
    ann = tmp_path / "ann.csv"
    cli.main(["annotate", "--dataset", str(dataset), "--out", str(ann)])
    argv = ["train", "--dataset", str(dataset), "--labels", "gt-soft", "--annotations", str(ann)]
    assert cli.main(argv + ["--epochs", "1", "--out", str(tmp_path / "m.slm")]) == 3


def test_train_bad_mode_is_usage_error(tmp_path, dataset):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--dataset", str(dataset), "--labels", "majority", "--out", str(tmp_path / "m")])
    assert exc.value.code == 2


def test_missing_dataset_is_io_error(tmp_path):
    code = cli.main(["train", "--dataset", str(tmp_path / "nope.sld"), "--epochs", "1", "--out", str(tmp_path / "m")])
    assert code == 6


def test_eval_appends_identical_rows(tmp_path, dataset, model):
    out = tmp_path / "report.csv"
    for _ in range(2):
        assert cli.main(["eval", "--model", str(model), "--dataset", str(dataset), "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0][:3] == ["run_id", "seed", "label_mode"]
    assert len(rows) == 3 and rows[1] == rows[2]
    assert int(rows[1][-1]) == 12  # test split of 60 items


def test_eval_splits_disjoint(dataset):
    ds = read_dataset(dataset)
    assert not set(ds.indices("val")) & set(ds.indices("test"))


def test_eval_class_count_mismatch(tmp_path, dataset):
    bad = tmp_path / "k4.slm"
    save_model(bad, init_network(0, num_classes=4))
    assert cli.main(["eval", "--model", str(bad), "--dataset", str(dataset), "--out", str(tmp_path / "r.csv")]) == 3


def test_corrupt_model_is_format_error(tmp_path, dataset):
    bad = tmp_path / "bad.slm"
    bad.write_bytes(b"NOPE" + bytes(20))
    assert cli.main(["eval", "--model", str(bad), "--dataset", str(dataset), "--out", str(tmp_path / "r.csv")]) == 4


def test_embed_outputs(tmp_path, dataset, model):
    csv_path, svg_path = tmp_path / "e.csv", tmp_path / "e.svg"
    argv = ["embed", "--model", str(model), "--dataset", str(dataset), "--split", "train", "--sample", "30"]
    argv += ["--perplexity", "5", "--iters", "50", "--out-csv", str(csv_path), "--out-svg", str(svg_path)]
    assert cli.main(argv) == 0
    rows = _rows(csv_path)
    assert rows[0] == ["item_index", "x", "y"] + [f"q{i}" for i in range(6)]
    assert len(rows) == 1 + 30
    svg = svg_path.read_text()
    fills = re.findall(r'<circle class="pt"[^>]*fill="(#[0-9a-f]{6})"', svg)
    assert len(fills) == 30
    ds = read_dataset(dataset)
    for row, fill in zip(rows[1:], fills):
        q = ds.labels[int(row[0])]
        if q.max() == 1.0:
            assert fill == hex_color(CLASS_COLORS[int(np.argmax(q))])


def test_embed_sample_clamped(tmp_path, dataset, model, caplog):
    csv_path = tmp_path / "e.csv"
    argv = ["embed", "--model", str(model), "--dataset", str(dataset), "--sample", "500", "--perplexity", "3"]
    argv += ["--iters", "10", "--out-csv", str(csv_path), "--out-svg", str(tmp_path / "e.svg")]
    assert cli.main(argv) == 0
    assert len(_rows(csv_path)) == 1 + 12
    assert "clamp" in caplog.text.lower()


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"count": 20, "size": 16, "pure-frac": 1.0, "out": str(tmp_path / "cfg.sld")}))
    args = cli.parse_args(["generate", "--config", str(cfg), "--count", "30"])
    assert args.count == 30  # flag beats config
    assert args.size == 16 and args.pure_frac == 1.0  # config beats default
    assert args.seed == 0  # default when neither sets it
    assert cli.main(["generate", "--config", str(cfg)]) == 0
    assert len(read_dataset(tmp_path / "cfg.sld")) == 20


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path / "x.sld")]) == 3


def test_config_list_values(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"modes": ["gt-soft", "sim-hard"], "split": [0.5, 0.25, 0.25]}))
    args = cli.parse_args(["experiment", "--config", str(cfg), "--out", str(tmp_path)])
    assert args.modes == ("gt-soft", "sim-hard")
    assert args.split == (0.5, 0.25, 0.25)
