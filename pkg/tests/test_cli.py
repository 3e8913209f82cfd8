import numpy as np
import pytest
from PIL import Image

from eigenmatch import (
    Homography,
    RunConfig,
    load_feature_grid,
    pointwise_loss,
    read_homography_file,
)
from eigenmatch.cli import main
from eigenmatch.synthetic import (
    photometric_jitter,
    random_homography,
    value_noise_texture,
    warp_image,
)


def write_png(path, image):
    arr = np.clip(image.pixels * 255.0, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


@pytest.fixture
def texture_png(tmp_path):
    path = tmp_path / "tex.png"
    write_png(path, value_noise_texture(64, 64, seed=11))
    return path


SMALL = [
    "--grid-width", "10", "--grid-height", "10",
    "--m", "8", "--patch-radius", "2",
]


class TestDescribe:
    def test_writes_grid_at_working_resolution(self, tmp_path, texture_png):
        out = tmp_path / "tex.fgrd"
        code = main(["describe", str(texture_png), "-o", str(out), *SMALL])
        assert code == 0
        grid = load_feature_grid(out)
        assert (grid.grid_width, grid.grid_height) == (10, 10)
        assert grid.channels == 5 * 5 + 8

    def test_default_grid_is_28(self, tmp_path):
        img_path = tmp_path / "big.png"
        write_png(img_path, value_noise_texture(224, 224, seed=12))
        out = tmp_path / "big.fgrd"
        assert main(["describe", str(img_path), "-o", str(out)]) == 0
        grid = load_feature_grid(out)
        assert (grid.grid_width, grid.grid_height) == (28, 28)

    def test_deterministic_bytes(self, tmp_path, texture_png):
        out1, out2 = tmp_path / "a.fgrd", tmp_path / "b.fgrd"
        assert main(["describe", str(texture_png), "-o", str(out1), *SMALL]) == 0
        assert main(["describe", str(texture_png), "-o", str(out2), *SMALL]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_image_smaller_than_patch_exits_3(self, tmp_path):
        img_path = tmp_path / "tiny.png"
        write_png(img_path, value_noise_texture(8, 8, seed=13))
        out = tmp_path / "tiny.fgrd"
        code = main(
            ["describe", str(img_path), "-o", str(out), "--patch-radius", "4"]
        )
        assert code == 3

    def test_missing_image_exits_2(self, tmp_path):
        code = main(["describe", str(tmp_path / "nope.png"), "-o", str(tmp_path / "x")])
        assert code == 2


class TestMatch:
    def test_self_match_near_identity(self, tmp_path, texture_png):
        grid_path = tmp_path / "g.fgrd"
        assert main(["describe", str(texture_png), "-o", str(grid_path), *SMALL]) == 0
        h_path = tmp_path / "h.txt"
        m_path = tmp_path / "m.txt"
        code = main(
            [
                "match", str(grid_path), str(grid_path),
                "-o", str(h_path), "--matches", str(m_path), *SMALL,
            ]
        )
        assert code == 0
        h = read_homography_file(h_path)
        assert np.max(np.abs(h.matrix - np.eye(3))) <= 1e-3
        lines = m_path.read_text().strip().splitlines()
        assert len(lines) == 100
        assert all(len(ln.split()) == 5 for ln in lines)

    def test_channel_mismatch_exits_3(self, tmp_path, texture_png):
        g1 = tmp_path / "g1.fgrd"
        g2 = tmp_path / "g2.fgrd"
        assert main(["describe", str(texture_png), "-o", str(g1), *SMALL]) == 0
        assert main(
            ["describe", str(texture_png), "-o", str(g2),
             "--grid-width", "10", "--grid-height", "10",
             "--m", "8", "--patch-radius", "3"]
        ) == 0
        code = main(["match", str(g1), str(g2), "-o", str(tmp_path / "h.txt"), *SMALL])
        assert code == 3

    def test_corrupt_grid_exits_3(self, tmp_path):
        bad = tmp_path / "bad.fgrd"
        bad.write_bytes(b"JUNKJUNKJUNK")
        code = main(["match", str(bad), str(bad), "-o", str(tmp_path / "h.txt")])
        assert code == 3

    def test_missing_grid_exits_2(self, tmp_path):
        code = main(
            ["match", str(tmp_path / "a.fgrd"), str(tmp_path / "b.fgrd"),
             "-o", str(tmp_path / "h.txt")]
        )
        assert code == 2

    def test_warped_fixture_beats_identity(self, tmp_path):
        rng = np.random.default_rng(21)
        image = value_noise_texture(96, 96, seed=21)
        h_true = random_homography(96, 96, rng, max_translation=6.0)
        warped = photometric_jitter(warp_image(image, h_true), rng)
        p1 = tmp_path / "a.png"
        p2 = tmp_path / "b.png"
        write_png(p1, image)
        write_png(p2, warped)

        cfg = ["--grid-width", "12", "--grid-height", "12", "--m", "10",
               "--patch-radius", "3"]
        g1, g2 = tmp_path / "a.fgrd", tmp_path / "b.fgrd"
        assert main(["describe", str(p1), "-o", str(g1), *cfg]) == 0
        assert main(["describe", str(p2), "-o", str(g2), *cfg]) == 0
        h_path = tmp_path / "h.txt"
        assert main(["match", str(g1), str(g2), "-o", str(h_path), *cfg]) == 0

        keypoints = np.array(
            [[20.0, 20.0], [70.0, 25.0], [30.0, 70.0], [65.0, 60.0], [48.0, 48.0]]
        )
        from eigenmatch import project_points

        targets = project_points(Homography(h_true), keypoints)
        estimated = read_homography_file(h_path)
        assert pointwise_loss(estimated, keypoints, targets) <= pointwise_loss(
            Homography.identity(), keypoints, targets
        )


class TestEval:
    def make_dataset(self, tmp_path, n_pairs=2, malformed=0):
        lines = []
        for i in range(n_pairs):
            img = value_noise_texture(60, 60, seed=30 + i)
            img_path = tmp_path / f"img{i}.png"
            write_png(img_path, img)
            ann = tmp_path / f"ann{i}.txt"
            ann.write_text(
                f"pair p{i} img{i}.png img{i}.png\n"
                "10 10 10 10\n40 20 40 20\n25 45 25 45\n"
            )
            lines.append(f"annotation ann{i}.txt")
        for j in range(malformed):
            bad = tmp_path / f"bad{j}.txt"
            bad.write_text(f"pair bad{j} img0.png missing{j}.png\n10 10 10 10\n")
            lines.append(f"annotation bad{j}.txt")
        manifest = tmp_path / "manifest.txt"
        manifest.write_text("\n".join(lines) + "\n")
        return manifest

    def test_self_pair_manifest_full_rates(self, tmp_path):
        manifest = self.make_dataset(tmp_path)
        out = tmp_path / "report"
        code = main(["eval", str(manifest), "-o", str(out), *SMALL])
        assert code == 0
        tsv = (out / "report.tsv").read_text()
        for d in (5, 10, 15, 20):
            assert f"delta<={d}\t100.00" in tsv
        assert (out / "report.json").exists()

    def test_partial_failure_still_succeeds(self, tmp_path):
        manifest = self.make_dataset(tmp_path, n_pairs=4, malformed=1)
        out = tmp_path / "report"
        code = main(["eval", str(manifest), "-o", str(out), *SMALL])
        assert code == 0
        tsv = (out / "report.tsv").read_text()
        assert "evaluated=4 excluded=1" in tsv
        assert "\tio" in tsv

    def test_deterministic_reports(self, tmp_path):
        manifest = self.make_dataset(tmp_path)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["eval", str(manifest), "-o", str(out1), *SMALL]) == 0
        assert main(["eval", str(manifest), "-o", str(out2), *SMALL]) == 0
        assert (out1 / "report.tsv").read_bytes() == (out2 / "report.tsv").read_bytes()
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()

    def test_empty_manifest_exits_1(self, tmp_path):
        manifest = tmp_path / "empty.txt"
        manifest.write_text("# nothing here\n")
        assert main(["eval", str(manifest), "-o", str(tmp_path / "r")]) == 1


class TestUsage:
    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1

    def test_missing_required(self):
        assert main(["describe"]) == 1

    def test_bad_deltas_value(self, tmp_path, texture_png):
        code = main(
            ["describe", str(texture_png), "-o", str(tmp_path / "x.fgrd"),
             "--deltas", "abc"]
        )
        assert code == 1

    def test_config_file_roundtrip(self, tmp_path, texture_png):
        cfg = RunConfig(grid_width=9, grid_height=9, m=6, patch_radius=2)
        cfg_path = tmp_path / "cfg.json"
        cfg.to_json_file(cfg_path)
        assert RunConfig.from_json_file(cfg_path) == cfg
        out = tmp_path / "g.fgrd"
        code = main(
            ["describe", str(texture_png), "-o", str(out), "--config", str(cfg_path),
             "--grid-width", "7"]
        )
        assert code == 0
        grid = load_feature_grid(out)
        # flag overrides config file value
        assert (grid.grid_width, grid.grid_height) == (7, 9)
