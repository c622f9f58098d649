import json

import numpy as np
import pytest

from discus import cli, experiments
from discus.classical import CSParams, LSParams
from discus.data_model import DivergenceError, ImageSeries, KSpaceDataset, load_container, save_container
from discus.experiments import (
    ConfigError,
    ExperimentConfig,
    error_map,
    grid_search,
    retrospective_undersample,
    run_study,
    synth_lge_standin,
)
from discus.metrics import evaluate
from discus.neural import FitConfig, GeneratorConfig
from discus.operator import full_mask
from discus.sampling import MaskParams, gro_mask


def tiny(**kw):
    base = dict(
        study="shepp_rotation",
        size=16,
        T=4,
        R=2.0,
        acs=2,
        methods=["cs", "ls", "discus"],
        cs=CSParams(lambda_w=1e-3, iters=10, wavelet_levels=2),
        ls=LSParams(lambda_l=0.05, lambda_s=0.01, iters=5),
        generator=GeneratorConfig(base_channels=4, depth=2),
        fit=FitConfig(mode="discus", lam=1e-3, iters=3, lr=1e-3),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_json_roundtrip(tmp_path):
    cfg = tiny(grid={"cs.lambda_w": [1e-3, 1e-2]})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    again = ExperimentConfig.load(path)
    assert again == cfg


@pytest.mark.parametrize(
    "bad",
    [
        {"study": "nope"},
        {"color": 1},
        {"methods": ["svd"]},
        {"grid": {"cs.missing": [1]}},
        {"grid": {"cs.lambda_w": []}},
        {"study": "external_lge"},
        {"cs": {"lambda_w": -1.0}},
        {"fit": {"mode": "discus", "lam": 0.0}},
    ],
)
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_run_study_outputs(tmp_path):
    cfg = tiny(output_dir=str(tmp_path / "run"))
    rep = run_study(cfg)
    out = tmp_path / "run"
    assert set(rep["methods"]) == {"cs", "ls", "discus"}
    ref = load_container(out / "reference")
    for m, entry in rep["methods"].items():
        assert np.isfinite(entry["nmse_db"])
        # reported numbers are recomputable from the persisted containers
        again = evaluate(load_container(out / f"recon_{m}"), ref).as_dict()
        assert abs(again["nmse_db"] - entry["nmse_db"]) < 1e-4
        head = (out / f"error_{m}.pgm").read_bytes()[:12]
        assert head.startswith(b"P5\n64 16\n255")
    assert rep["methods"]["cs"]["fista_monotone"] is True
    assert "manifold_dim" in rep["methods"]["discus"]
    assert json.loads((out / "config.json").read_text())["size"] == 16
    table = (out / "report.txt").read_text().splitlines()
    assert table[1].split()[:3] == ["method", "nmse_db", "ssim"]
    assert len({len(line) for line in table[1:]}) == 1


def test_report_bytes_identical(tmp_path):
    a = tiny(output_dir=str(tmp_path / "a"))
    b = tiny(output_dir=str(tmp_path / "b"))
    run_study(a)
    run_study(b)
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_error_map_clip():
    ref = np.ones((2, 4, 4))
    est = ref.copy()
    est[0, 0, 0] = 3.0
    est[1, 1, 1] = 1.1
    img = error_map(est, ref, 5.0)
    assert img.dtype == np.uint8
    assert img[0, 0, 0] == 255 and img[1, 1, 1] == 128 and img[0, 2, 2] == 0


def test_grid_degenerate_and_argmin(tmp_path):
    cfg = tiny(methods=["cs"], grid={"cs.lambda_w": [2e-3]})
    best, board = grid_search(cfg, "cs")
    assert best == {"cs.lambda_w": 2e-3} and len(board) == 1
    cfg = tiny(grid={"cs.lambda_w": [1e-4, 0.5]}, output_dir=str(tmp_path))
    best, board = grid_search(cfg, "cs")
    assert board[0]["nmse_db"] <= board[1]["nmse_db"]
    assert best == board[0]["params"]
    assert json.loads((tmp_path / "grid_cs.json").read_text())["leaderboard"] == board


def test_grid_two_by_two():
    cfg = tiny(grid={"ls.lambda_l": [0.01, 0.1], "ls.lambda_s": [0.001, 0.05]})
    _, board = grid_search(cfg, "ls")
    assert len(board) == 4
    nm = [r["nmse_db"] for r in board]
    assert nm == sorted(nm)
    with pytest.raises(ConfigError):
        grid_search(tiny(), "ls")


@pytest.mark.parametrize("r", [2.0, 4.0])
def test_external_lge_end_to_end(tmp_path, r):
    full = synth_lge_standin(size=32, t=4, n_coils=8, seed=1)
    save_container(full, tmp_path / "lge")
    cfg = ExperimentConfig(
        study="external_lge",
        size=32,
        T=4,
        R=r,
        acs=4,
        input_path=str(tmp_path / "lge"),
        methods=["cs", "ls"],
        cs=CSParams(lambda_w=1e-3, iters=10, wavelet_levels=2),
        ls=LSParams(lambda_l=0.01, lambda_s=0.001, iters=5),
        output_dir=str(tmp_path / "out"),
    )
    rep = run_study(cfg)
    data = load_container(tmp_path / "out" / "kspace")
    assert isinstance(data, KSpaceDataset) and data.shape == (4, 8, 32, 32)
    assert np.all(data.mask.mask.sum(axis=1) == round(32 / r))
    for m in ("cs", "ls"):
        assert np.isfinite(rep["methods"][m]["nmse_db"]) and rep["methods"][m]["nmse_db"] < 0


def test_external_requires_full_sampling(tmp_path):
    full = synth_lge_standin(size=16, t=2, n_coils=2)
    mask = gro_mask(MaskParams(16, 2, 2, 2))
    part = retrospective_undersample(full, mask)
    with pytest.raises(ConfigError):
        retrospective_undersample(part, mask)
    cfg = ExperimentConfig(study="external_lge", size=16, T=2, input_path=str(tmp_path / "missing"))
    with pytest.raises(FileNotFoundError):
        run_study(cfg)


def test_divergence_keeps_partial_artifacts(tmp_path, monkeypatch):
    real = experiments.run_method

    def flaky(method, data, cfg):
        if method == "ls":
            raise DivergenceError("boom")
        return real(method, data, cfg)

    monkeypatch.setattr(experiments, "run_method", flaky)
    with pytest.raises(DivergenceError):
        run_study(tiny(methods=["cs", "ls"], output_dir=str(tmp_path)))
    rep = json.loads((tmp_path / "report.json").read_text())
    assert list(rep["methods"]) == ["cs"] and rep["diverged"] == "boom"
    assert (tmp_path / "recon_cs" / "meta.json").exists()


# --- CLI ---------------------------------------------------------------------


def _cfg_file(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(tiny(**kw).to_dict()))
    return str(path)


def test_cli_pipeline(tmp_path, capsys):
    cfg = _cfg_file(tmp_path)
    out = str(tmp_path / "o")
    assert cli.main(["phantom", "--config", cfg, "--out", out]) == 0
    assert cli.main(["mask", "--config", cfg, "--out", out]) == 0
    argv = ["simulate", "--config", cfg, "--out", out, "--truth", f"{out}/reference", "--mask", f"{out}/mask"]
    assert cli.main(argv) == 0
    assert cli.main(["recon", "--method", "cs", "--config", cfg, "--out", out, "--data", f"{out}/kspace"]) == 0
    capsys.readouterr()
    assert cli.main(["eval", "--recon", f"{out}/recon_cs", "--ref", f"{out}/reference", "--config", cfg]) == 0
    got = json.loads(capsys.readouterr().out)
    assert isinstance(load_container(f"{out}/reference"), ImageSeries)
    assert got["nmse_db"] < 0


def test_cli_report_and_grid(tmp_path, capsys):
    cfg = _cfg_file(tmp_path, methods=["cs"], grid={"cs.lambda_w": [1e-3, 1e-2]})
    assert cli.main(["--seed", "2", "report", "--config", cfg, "--out", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "report.json").read_text())["seed"] == 2
    assert cli.main(["grid", "--method", "cs", "--config", cfg, "--out", str(tmp_path / "g")]) == 0
    assert "best" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, monkeypatch):
    assert cli.main(["report", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"study": "elsewhere"}')
    assert cli.main(["report", "--config", str(bad)]) == 1
    assert cli.main(["mask", "--set", "R=0.5"]) == 1

    def diverge(*a, **k):
        raise DivergenceError("nan loss")

    monkeypatch.setattr(cli, "run_method", diverge)
    assert cli.main(["recon", "--method", "ls", "--config", _cfg_file(tmp_path)]) == 2
