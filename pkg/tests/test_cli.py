import hashlib
import json
from pathlib import Path

import pytest

from vibrancy.cli import main
from vibrancy.config import parse_config
from vibrancy.errors import ConfigError
from vibrancy.pipeline import run_pipeline
from vibrancy.synth import SynthSpec, generate_for_day_types, write_city


def sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def tree_hashes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): sha(p)
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def city_dir(tmp_path_factory):
    """One small synthetic city shared by the pipeline tests."""
    out = tmp_path_factory.mktemp("city")
    spec = SynthSpec(seed=5, n_cells=48, k_true=2, noise_sigma=0.8, region_name="alpha")
    truth = generate_for_day_types(spec, ["weekday", "weekend"])
    write_city(truth, out)
    (out / "pipeline.cfg").write_text(
        "seed = 9\nlevel = local\nday_types = weekday, weekend\n"
        "k_min = 2\nk_max = 4\nrestarts = 3\nlambda = 1.0\n"
        "service_taxonomy = service_taxonomy.csv\n"
        "third_place_taxonomy = third_places.csv\n\n"
        "[city.alpha]\nregion = region.json\ntraffic = traffic.csv\n"
        "pois = pois.csv\ntruth = truth_labels.csv\n"
    )
    return out


@pytest.fixture(scope="module")
def run_dir(city_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["run", "--config", str(city_dir / "pipeline.cfg"), "--out", str(out)])
    assert code == 0
    return out


class TestConfigParser:
    def test_full_round(self, city_dir):
        config = parse_config(city_dir / "pipeline.cfg")
        assert config.seed == 9
        assert config.day_types == ["weekday", "weekend"]
        assert config.k_min == 2 and config.k_max == 4
        assert config.cities[0].name == "alpha"
        assert config.cities[0].region.is_file()

    def test_comments_quotes_and_types(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text(
            "# top comment\nseed = 3   # inline\nlambda = 2.5\n"
            "drop_silent_cells = true\nday_types = weekday\n"
            'service_taxonomy = "svc.csv"\nthird_place_taxonomy = tp.csv\n'
            "[city.x]\nregion = r.json\ntraffic = t.csv\npois = p.csv\n"
        )
        config = parse_config(path)
        assert config.seed == 3 and config.lam == 2.5
        assert config.drop_silent_cells is True
        assert config.service_taxonomy.name == "svc.csv"

    @pytest.mark.parametrize("body", [
        "seed = 1\n",  # no taxonomies
        "service_taxonomy = a\nthird_place_taxonomy = b\n[city.x]\nregion = r\n",
        "service_taxonomy = a\nthird_place_taxonomy = b\nk_min = 9\nk_max = 3\n"
        "[city.x]\nregion = r\ntraffic = t\npois = p\n",
        "service_taxonomy = a\nthird_place_taxonomy = b\nlevel = cosmic\n"
        "[city.x]\nregion = r\ntraffic = t\npois = p\n",
        "seed = 1\nseed = 2\n",
        "[section]\n",
    ])
    def test_bad_configs_rejected(self, tmp_path, body):
        path = tmp_path / "bad.cfg"
        path.write_text(body)
        with pytest.raises(ConfigError):
            parse_config(path)


class TestRun:
    def test_artifacts_and_results(self, run_dir):
        manifest = json.loads((run_dir / "manifest.json").read_text())
        for day in ("weekday", "weekend"):
            scope = run_dir / "alpha" / day
            for name in (
                "signatures_raw.sig", "signatures_rr.sig", "kselection.json",
                "clusters.bin", "labels.csv", "labels.geojson", "features.csv",
                "model.json", "coefficients.csv", "metrics.json",
            ):
                assert (scope / name).is_file(), name
            result = manifest["results"][f"alpha/{day}"]
            assert result["chosen_k"] == 2
            assert result["ari_vs_truth"] == 1.0
        assert len(manifest["results"]) == 2  # day-type fan-out
        assert manifest["config"]["seed"] == 9

    def test_manifest_hashes_are_accurate(self, run_dir):
        manifest = json.loads((run_dir / "manifest.json").read_text())
        for rel, digest in manifest["artifacts"].items():
            assert sha(run_dir / rel) == digest

    def test_rerun_from_manifest_is_bitwise_identical(self, run_dir, tmp_path):
        again = tmp_path / "again"
        code = main(["run", "--manifest", str(run_dir / "manifest.json"),
                     "--out", str(again)])
        assert code == 0
        assert tree_hashes(again) == tree_hashes(run_dir)

    def test_missing_traffic_aborts_with_stage(self, city_dir, tmp_path, capsys):
        bad_cfg = tmp_path / "bad.cfg"
        bad_cfg.write_text(
            "service_taxonomy = {0}/service_taxonomy.csv\n"
            "third_place_taxonomy = {0}/third_places.csv\n"
            "day_types = weekday\n"
            "[city.alpha]\nregion = {0}/region.json\n"
            "traffic = {0}/absent.csv\npois = {0}/pois.csv\n".format(city_dir)
        )
        code = main(["run", "--config", str(bad_cfg), "--out", str(tmp_path / "o")])
        assert code == 2
        err = capsys.readouterr().err
        assert "ingest" in err and "absent.csv" in err


class TestChainingEqualsRun:
    def test_subcommands_reproduce_run_artifacts(self, city_dir, run_dir, tmp_path):
        chain = tmp_path / "chain" / "alpha" / "weekday"
        chain.mkdir(parents=True)
        c = str(city_dir)
        assert main([
            "signatures", "--region", f"{c}/region.json", "--traffic", f"{c}/traffic.csv",
            "--service-taxonomy", f"{c}/service_taxonomy.csv", "--day-type", "weekday",
            "--segment-name", "alpha",
            "--out-raw", str(chain / "signatures_raw.sig"),
            "--out-rr", str(chain / "signatures_rr.sig"),
        ]) == 0
        assert main([
            "cluster", "--rr", str(chain / "signatures_rr.sig"),
            "--k-min", "2", "--k-max", "4", "--seed", "9", "--restarts", "3",
            "--out-dir", str(chain),
        ]) == 0
        assert main([
            "features", "--region", f"{c}/region.json", "--pois", f"{c}/pois.csv",
            "--third-places", f"{c}/third_places.csv", "--min-count", "10",
            "--cells-from", str(chain / "labels.csv"),
            "--out", str(chain / "features.csv"),
        ]) == 0
        assert main([
            "fit", "--features", str(chain / "features.csv"),
            "--labels", str(chain / "labels.csv"),
            "--lambda", "1.0", "--seed", "9", "--out-dir", str(chain),
        ]) == 0
        run_scope = run_dir / "alpha" / "weekday"
        for name in (
            "signatures_raw.sig", "signatures_rr.sig", "kselection.json",
            "clusters.bin", "labels.csv", "labels.geojson", "features.csv",
            "model.json", "coefficients.csv", "metrics.json",
        ):
            assert sha(chain / name) == sha(run_scope / name), name


class TestGlobalLevel:
    def test_two_city_global_run(self, tmp_path):
        cities = {}
        for name, seed in (("alpha", 5), ("beta", 6)):
            spec = SynthSpec(seed=seed, n_cells=36, k_true=2, noise_sigma=0.8,
                             region_name=name)
            write_city(generate_for_day_types(spec, ["weekday"]), tmp_path / name)
            cities[name] = tmp_path / name
        cfg = tmp_path / "global.cfg"
        cfg.write_text(
            "seed = 4\nlevel = global\nday_types = weekday\n"
            "k_min = 2\nk_max = 4\nrestarts = 3\n"
            f"service_taxonomy = alpha/service_taxonomy.csv\n"
            f"third_place_taxonomy = alpha/third_places.csv\n\n"
            "[city.alpha]\nregion = alpha/region.json\ntraffic = alpha/traffic.csv\n"
            "pois = alpha/pois.csv\ntruth = alpha/truth_labels.csv\n\n"
            "[city.beta]\nregion = beta/region.json\ntraffic = beta/traffic.csv\n"
            "pois = beta/pois.csv\ntruth = beta/truth_labels.csv\n"
        )
        out = tmp_path / "gout"
        manifest = run_pipeline(parse_config(cfg), out)
        scope = out / "global" / "weekday"
        for name in (
            "signatures_raw_alpha.sig", "signatures_raw_beta.sig", "signatures_rr.sig",
            "kselection.json", "clusters.bin",
            "labels_alpha.csv", "labels_beta.csv",
            "labels_alpha.geojson", "labels_beta.geojson",
            "features_alpha.csv", "features_beta.csv",
            "model.json", "coefficients.csv", "metrics.json",
        ):
            assert (scope / name).is_file(), name
        result = manifest["results"]["global/weekday"]
        # same plant in both cities: archetypes should be recovered jointly
        assert result["ari_vs_truth"] == 1.0
        labels_a = (scope / "labels_alpha.csv").read_text().splitlines()
        assert len(labels_a) == 37  # header + 36 cells


class TestReport:
    def test_report_prints_summary(self, run_dir, capsys):
        assert main(["report", "--run-dir", str(run_dir)]) == 0
        out = capsys.readouterr().out
        assert "alpha/weekday" in out
        assert "silhouette by k" in out
        assert "total_diversity" in out

    def test_report_needs_manifest(self, tmp_path, capsys):
        assert main(["report", "--run-dir", str(tmp_path)]) == 2


class TestExitCodes:
    def test_usage_error_is_one(self, capsys):
        assert main(["cluster", "--bogus"]) == 1
        assert main(["definitely-not-a-command"]) == 1

    def test_data_error_is_two(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_numeric_error_is_three(self, city_dir, tmp_path, capsys):
        chain = tmp_path / "nm"
        chain.mkdir()
        assert main([
            "signatures", "--region", str(city_dir / "region.json"),
            "--traffic", str(city_dir / "traffic.csv"),
            "--service-taxonomy", str(city_dir / "service_taxonomy.csv"),
            "--day-type", "weekday", "--segment-name", "alpha",
            "--out-raw", str(chain / "raw.sig"), "--out-rr", str(chain / "rr.sig"),
        ]) == 0
        # k_max beyond the number of cells is a numeric error
        assert main([
            "cluster", "--rr", str(chain / "rr.sig"), "--k-min", "3",
            "--k-max", "400", "--out-dir", str(chain),
        ]) == 3


class TestSynthCommand:
    def test_generates_runnable_city(self, tmp_path):
        out = tmp_path / "s"
        assert main([
            "synth", "--out", str(out), "--seed", "2", "--cells", "60",
            "--k-true", "3", "--sigma", "0.5",
        ]) == 0
        config = parse_config(out / "pipeline.cfg")
        assert config.cities[0].name == "synthcity"
        run_out = tmp_path / "r"
        assert main([
            "run", "--config", str(out / "pipeline.cfg"), "--out", str(run_out),
            "--k-min", "3", "--k-max", "5", "--restarts", "3",
        ]) == 0
        manifest = json.loads((run_out / "manifest.json").read_text())
        result = manifest["results"]["synthcity/weekday"]
        assert result["chosen_k"] == 3
        assert result["ari_vs_truth"] == 1.0
