#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <jpeglib.h>

#include "doctest.h"
#include "llts/datakit.hpp"
#include "llts/errors.hpp"
#include "test_util.hpp"

using namespace llts;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("llts_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void make_layout_dirs(const fs::path& root) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  os << s;
}

void write_jpeg(const fs::path& p, std::size_t w, std::size_t h, unsigned char r, unsigned char g, unsigned char b) {
  FILE* f = std::fopen(p.c_str(), "wb");
  REQUIRE(f);
  jpeg_compress_struct c;
  jpeg_error_mgr err;
  c.err = jpeg_std_error(&err);
  jpeg_create_compress(&c);
  jpeg_stdio_dest(&c, f);
  c.image_width = static_cast<JDIMENSION>(w);
  c.image_height = static_cast<JDIMENSION>(h);
  c.input_components = 3;
  c.in_color_space = JCS_RGB;
  jpeg_set_defaults(&c);
  jpeg_set_quality(&c, 100, TRUE);
  jpeg_start_compress(&c, TRUE);
  std::vector<unsigned char> row(w * 3);
  for (std::size_t x = 0; x < w; ++x) {
    row[3 * x] = r;
    row[3 * x + 1] = g;
    row[3 * x + 2] = b;
  }
  while (c.next_scanline < c.image_height) {
    JSAMPROW rp = row.data();
    jpeg_write_scanlines(&c, &rp, 1);
  }
  jpeg_finish_compress(&c);
  jpeg_destroy_compress(&c);
  std::fclose(f);
}

double channel_mean(const Tensor& img, std::size_t c) {
  const std::size_t HW = img.dim(1) * img.dim(2);
  double s = 0;
  for (std::size_t i = 0; i < HW; ++i) s += img.data()[c * HW + i];
  return s / static_cast<double>(HW);
}

}  // namespace

TEST_SUITE("labels") {
  TEST_CASE("single line and comments") {
    std::istringstream in("# header\n0 0.5 0.5 0.1 0.1   # trailing\n\n");
    LabelParse p = parse_labels(in, 3, "t");
    REQUIRE(p.labels.size() == 1);
    CHECK(p.labels[0] == LabelRecord{0, 0.5, 0.5, 0.1, 0.1});
    CHECK(p.malformed == 0);
  }

  TEST_CASE("malformed lines are skipped and counted") {
    std::istringstream in("0 0.5 0.5 0.1\nx 0.5 0.5 0.1 0.1\n1 0.5 0.5 0 0.1\n1.5 0.5 0.5 0.1 0.1\n2 0.5 0.5 0.2 0.2 9\n"
                          "2 0.4 0.4 0.2 0.2\n");
    LabelParse p = parse_labels(in, 3, "t");
    CHECK(p.labels.size() == 1);
    CHECK(p.malformed == 5);
  }

  TEST_CASE("class outside the table is an error") {
    std::istringstream in("3 0.5 0.5 0.1 0.1\n");
    CHECK_THROWS_AS(parse_labels(in, 3, "t"), DataError);
  }

  TEST_CASE("boxes crossing the border are clipped") {
    std::istringstream in("0 0.05 0.5 0.2 0.2\n1 0.5 0.95 0.2 0.3\n");
    LabelParse p = parse_labels(in, 3, "t");
    REQUIRE(p.labels.size() == 2);
    CHECK(p.labels[0].cx == doctest::Approx(0.075));
    CHECK(p.labels[0].w == doctest::Approx(0.15));
    CHECK(p.labels[0].cy == 0.5);
    CHECK(p.labels[1].cy + p.labels[1].h / 2 == doctest::Approx(1.0));
  }

  TEST_CASE("format and parse are inverse") {
    std::vector<LabelRecord> ls{{0, 0.1234567890123, 0.5, 0.01, 0.3}, {2, 0.9, 0.2, 0.2, 0.4}};
    std::istringstream in(format_labels(ls));
    CHECK(parse_labels(in, 3, "t").labels == ls);
  }
}

TEST_SUITE("dataset") {
  TEST_CASE("missing directories") {
    TempDir d("ds_missing");
    CHECK_THROWS_AS(load_dataset(d.path), DataError);
  }

  TEST_CASE("empty directories give an empty manifest") {
    TempDir d("ds_empty");
    make_layout_dirs(d.path);
    DatasetManifest m = load_dataset(d.path);
    CHECK(m.images.empty());
    CHECK(m.class_counts == std::vector<std::size_t>{0, 0, 0});
    CHECK(m.class_names == default_class_names());
  }

  TEST_CASE("one image, one label; background image without label file") {
    TempDir d("ds_one");
    make_layout_dirs(d.path);
    save_png(d.path / "images/a.png", Tensor({3, 20, 30}, 0.5));
    save_png(d.path / "images/b.png", Tensor({3, 8, 8}, 0.1));
    write_text(d.path / "labels/a.txt", "0 0.5 0.5 0.1 0.1\n");
    DatasetManifest m = load_dataset(d.path);
    REQUIRE(m.images.size() == 2);
    CHECK(m.images[0].path == "images/a.png");
    CHECK(m.images[0].width == 30);
    CHECK(m.images[0].height == 20);
    CHECK(m.class_counts == std::vector<std::size_t>{1, 0, 0});
    CHECK(m.missing_label_files == 1);
    CHECK(m.images[1].labels.empty());
  }

  TEST_CASE("custom class table") {
    TempDir d("ds_classes");
    make_layout_dirs(d.path);
    write_text(d.path / "classes.txt", "stop\n");
    save_png(d.path / "images/a.png", Tensor({3, 4, 4}, 0.5));
    write_text(d.path / "labels/a.txt", "1 0.5 0.5 0.1 0.1\n");
    CHECK_THROWS_AS(load_dataset(d.path), DataError);
  }

  TEST_CASE("save then load is the identity") {
    TempDir d("ds_roundtrip");
    make_layout_dirs(d.path);
    DatasetManifest m;
    m.split = "train";
    m.class_names = default_class_names();
    m.provenance = {{"generator", "synth"}, {"seed", 7}};
    for (std::uint64_t s = 0; s < 4; ++s) {
      SynthScene sc = synth_scene(s, 48, 3);
      ImageEntry e;
      e.path = "images/" + std::to_string(s) + ".png";
      e.width = e.height = 48;
      e.labels = sc.labels;
      save_png(d.path / e.path, sc.image);
      m.images.push_back(e);
    }
    m.class_counts = recount(m);
    save_dataset(d.path, m);
    DatasetManifest back = load_dataset(d.path);
    CHECK(back == m);
  }

  TEST_CASE("inconsistent counts are refused") {
    TempDir d("ds_counts");
    DatasetManifest m;
    m.class_names = default_class_names();
    m.class_counts = {1, 0, 0};
    CHECK_THROWS_AS(save_dataset(d.path, m), DataError);
  }
}

TEST_SUITE("images") {
  TEST_CASE("png round trip quantizes to 8 bits") {
    TempDir d("png");
    Tensor img = testing::random_tensor({3, 7, 5}, 1, 0.0, 1.0);
    save_png(d.path / "x.png", img);
    Tensor back = load_image(d.path / "x.png");
    CHECK(back.shape() == img.shape());
    CHECK(testing::max_abs_diff(back, img) <= 0.5 / 255.0 + 1e-12);
    ImageSize s = image_size(d.path / "x.png");
    CHECK(s.width == 5);
    CHECK(s.height == 7);
  }

  TEST_CASE("jpeg decode") {
    TempDir d("jpg");
    write_jpeg(d.path / "c.jpg", 16, 8, 200, 100, 50);
    Tensor img = load_image(d.path / "c.jpg");
    CHECK(img.shape() == Shape{3, 8, 16});
    CHECK(std::fabs(channel_mean(img, 0) - 200.0 / 255) < 3.0 / 255);
    CHECK(std::fabs(channel_mean(img, 2) - 50.0 / 255) < 3.0 / 255);
    CHECK(image_size(d.path / "c.jpg").width == 16);
    write_text(d.path / "bad.jpg", "not an image");
    CHECK_THROWS_AS(load_image(d.path / "bad.jpg"), DataError);
  }

  TEST_CASE("resize keeps constants and is the identity at equal size") {
    Tensor c({3, 10, 14}, 0.3);
    const Tensor resized = resize_image(c, 7, 21);
    for (double v : resized.data()) CHECK(std::fabs(v - 0.3) < 1e-15);
    Tensor r = testing::random_tensor({3, 6, 6}, 2);
    CHECK(testing::max_abs_diff(resize_image(r, 6, 6), r) == 0.0);
  }
}

TEST_SUITE("synth") {
  TEST_CASE("same seed gives identical bytes, different seeds differ") {
    SynthScene a = synth_scene(11, 96, 4), b = synth_scene(11, 96, 4), c = synth_scene(12, 96, 4);
    CHECK(testing::max_abs_diff(a.image, b.image) == 0.0);
    CHECK(a.labels == b.labels);
    CHECK(testing::max_abs_diff(a.image, c.image) > 0.0);
  }

  TEST_CASE("labels are normalized, in range and sized as configured") {
    for (std::uint64_t s = 0; s < 40; ++s) {
      SynthScene sc = synth_scene(s, 160, 4);
      CHECK(!sc.labels.empty());
      CHECK(sc.labels.size() <= 4);
      for (const LabelRecord& r : sc.labels) {
        CHECK(r.cx - r.w / 2 >= 0.0);
        CHECK(r.cx + r.w / 2 <= 1.0);
        CHECK(r.cy - r.h / 2 >= 0.0);
        CHECK(r.cy + r.h / 2 <= 1.0);
        CHECK(r.w * 160 >= 11.0);
        CHECK(r.w * 160 <= 61.0);
      }
      for (double v : sc.image.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }

  TEST_CASE("labels tightly bound the pixels the glyph changes") {
    const std::size_t S = 128;
    SynthOptions opt;
    opt.size = S;
    for (std::uint64_t s = 0; s < 25; ++s) {
      SceneLayout L = make_layout(s, opt);
      Tensor with = render_layout(L, true), without = render_layout(L, false);
      SynthScene sc = synth_scene(s, opt);
      REQUIRE(sc.labels.size() == L.signs.size());
      for (std::size_t k = 0; k < L.signs.size(); ++k) {
        const LabelRecord& r = sc.labels[k];
        // Scan a window 3 px beyond the label; glyphs are placed >= 2 px apart.
        const double lx0 = (r.cx - r.w / 2) * S, lx1 = (r.cx + r.w / 2) * S;
        const double ly0 = (r.cy - r.h / 2) * S, ly1 = (r.cy + r.h / 2) * S;
        const auto wx0 = static_cast<std::size_t>(std::max(0.0, lx0 - 1)), wx1 = static_cast<std::size_t>(std::min<double>(S, lx1 + 1));
        const auto wy0 = static_cast<std::size_t>(std::max(0.0, ly0 - 1)), wy1 = static_cast<std::size_t>(std::min<double>(S, ly1 + 1));
        double bx0 = S, by0 = S, bx1 = 0, by1 = 0;
        std::size_t changed = 0;
        for (std::size_t y = wy0; y < wy1; ++y)
          for (std::size_t x = wx0; x < wx1; ++x) {
            bool diff = false;
            for (std::size_t c = 0; c < 3; ++c) diff = diff || with.data()[(c * S + y) * S + x] != without.data()[(c * S + y) * S + x];
            if (!diff) continue;
            ++changed;
            bx0 = std::min(bx0, double(x));
            by0 = std::min(by0, double(y));
            bx1 = std::max(bx1, double(x + 1));
            by1 = std::max(by1, double(y + 1));
          }
        CHECK(changed > 0);
        CHECK(std::fabs(bx0 - lx0) <= 1.0 + 1e-9);
        CHECK(std::fabs(bx1 - lx1) <= 1.0 + 1e-9);
        CHECK(std::fabs(by0 - ly0) <= 1.0 + 1e-9);
        CHECK(std::fabs(by1 - ly1) <= 1.0 + 1e-9);
      }
    }
  }

  TEST_CASE("class frequencies follow the configured ratios") {
    for (auto ratios : {default_class_ratios(), std::array<double, 3>{1, 1, 1}}) {
      SynthOptions opt;
      opt.class_ratios = ratios;
      std::array<double, 3> counts{};
      double total = 0;
      for (std::uint64_t s = 0; s < 1000; ++s)
        for (const SignGlyph& g : make_layout(s, opt).signs) {
          counts[static_cast<std::size_t>(g.class_id)] += 1;
          total += 1;
        }
      const double rsum = ratios[0] + ratios[1] + ratios[2];
      for (std::size_t c = 0; c < 3; ++c) CHECK(std::fabs(counts[c] / total - ratios[c] / rsum) < 0.03);
    }
  }

  TEST_CASE("invalid options") {
    SynthOptions opt;
    opt.max_signs = 0;
    CHECK_THROWS_AS(make_layout(0, opt), UsageError);
    opt.max_signs = 2;
    opt.class_ratios = {0, 0, 0};
    CHECK_THROWS_AS(make_layout(0, opt), UsageError);
  }
}

TEST_SUITE("degrade") {
  TEST_CASE("identity parameters leave the image unchanged") {
    Tensor img = testing::random_tensor({3, 9, 11}, 4, 0.0, 1.0);
    CHECK(testing::max_abs_diff(degrade_lowlight(img, DegradeParams::identity()), img) == 0.0);
  }

  TEST_CASE("gamma two on constant one half") {
    DegradeParams p = DegradeParams::identity();
    p.gamma_dark = 2.0;
    const Tensor dark = degrade_lowlight(Tensor({3, 5, 5}, 0.5), p);
    for (double v : dark.data()) CHECK(v == 0.25);
  }

  TEST_CASE("seeded noise is reproducible") {
    Tensor img = synth_scene(3, 64, 2).image;
    DegradeParams p = DegradeParams::profile("severe");
    p.seed = 9;
    Tensor a = degrade_lowlight(img, p), b = degrade_lowlight(img, p);
    CHECK(testing::max_abs_diff(a, b) == 0.0);
    p.seed = 10;
    CHECK(testing::max_abs_diff(a, degrade_lowlight(img, p)) > 0.0);
  }

  TEST_CASE("darkening never raises a channel mean before noise") {
    Rng rng(21);
    for (int k = 0; k < 30; ++k) {
      Tensor img = testing::random_tensor({3, 12, 10}, static_cast<std::uint64_t>(k), 0.0, 1.0);
      DegradeParams p;
      p.gamma_dark = rng.uniform(1.5, 4.0);
      p.contrast_scale = rng.uniform(0.1, 1.0);
      p.blur_sigma = rng.uniform(0.0, 1.5);
      p.noise_sigma = 0.0;
      p.color_cast = {rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0)};
      Tensor out = degrade_lowlight(img, p);
      for (std::size_t c = 0; c < 3; ++c) CHECK(channel_mean(out, c) <= channel_mean(img, c) + 1e-12);
    }
  }

  TEST_CASE("profiles and validation") {
    CHECK_THROWS_AS(DegradeParams::profile("dusk"), UsageError);
    DegradeParams p;
    p.contrast_scale = 0.0;
    CHECK_THROWS_AS(degrade_lowlight(Tensor({3, 2, 2}, 0.5), p), UsageError);
    const Tensor severe = degrade_lowlight(synth_scene(1, 32, 1).image, DegradeParams::profile("severe"));
    for (double v : severe.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_SUITE("anchor_stats") {
  DatasetManifest manifest_with(std::vector<ImageEntry> images) {
    DatasetManifest m;
    m.class_names = default_class_names();
    m.images = std::move(images);
    m.class_counts = recount(m);
    return m;
  }

  TEST_CASE("single label") {
    auto m = manifest_with({{"images/a.png", 100, 100, {{0, 0.5, 0.5, 0.2, 0.2}}}});
    AnchorStats s = anchor_stats(m);
    CHECK(s.mean_w == doctest::Approx(20.0).epsilon(1e-14));
    CHECK(s.mean_h == doctest::Approx(20.0).epsilon(1e-14));
    CHECK(s.count == 1);
  }

  TEST_CASE("two instances") {
    auto m = manifest_with({{"images/a.png", 100, 100, {{0, 0.5, 0.5, 0.1, 0.1}}},
                            {"images/b.png", 200, 100, {{1, 0.5, 0.5, 0.15, 0.5}}}});
    AnchorStats s = anchor_stats(m);
    CHECK(s.mean_w == doctest::Approx(20.0).epsilon(1e-14));
    CHECK(s.mean_h == doctest::Approx(30.0).epsilon(1e-14));
    std::ostringstream os;
    write_anchor_csv(os, s);
    CHECK(os.str() == "w_lo,w_hi,h_lo,h_hi,count\n8,16,8,16,1\n24,32,48,56,1\n");
  }

  TEST_CASE("empty manifest is an error") {
    CHECK_THROWS_AS(anchor_stats(manifest_with({})), DataError);
    CHECK_THROWS_AS(anchor_stats(manifest_with({{"images/a.png", 10, 10, {}}})), DataError);
  }
}
