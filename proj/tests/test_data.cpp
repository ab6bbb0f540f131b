#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"

using namespace advret;
namespace fs = std::filesystem;

TEST_CASE("ppm round trip preserves 8-bit color exactly") {
    const fs::path dir = fs::temp_directory_path() / "advret_ppm_test";
    fs::create_directories(dir);
    Rng rng(1);
    Tensor<float> img({3, 9, 7});
    for (std::int64_t i = 0; i < img.size(); ++i)
        img[i] = static_cast<float>(rng.bounded(256)) / 255.0f;  // exactly representable levels
    save_ppm(dir / "img.ppm", img);
    const Tensor<float> back = load_ppm<float>(dir / "img.ppm");
    REQUIRE(back.dims() == img.dims());
    for (std::int64_t i = 0; i < img.size(); ++i)
        REQUIRE(std::abs(back[i] - img[i]) < 1e-6f);
    REQUIRE_THROWS_AS(load_ppm<float>(dir / "missing.ppm"), IoError);
    {
        std::ofstream bad(dir / "bad.ppm", std::ios::binary);
        bad << "P5\n1 1\n255\n";
    }
    REQUIRE_THROWS_AS(load_ppm<float>(dir / "bad.ppm"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("bilinear resize endpoints") {
    Tensor<float> img = Tensor<float>::full({3, 8, 8}, 0.3f);
    const Tensor<float> up = resize_bilinear(img, 32);
    REQUIRE(up.dims() == Shape{3, 32, 32});
    for (std::int64_t i = 0; i < up.size(); ++i) REQUIRE(up[i] == Catch::Approx(0.3f).margin(1e-6));
    REQUIRE(resize_bilinear(img, 8) == img);  // no-op path
}

TEST_CASE("rendered toy images are valid, class-distinct and deterministic") {
    const Tensor<float> a = render_toy_image<float>(3, 17, 42);
    const Tensor<float> b = render_toy_image<float>(3, 17, 42);
    REQUIRE(a == b);
    REQUIRE(a.dims() == Shape{3, 64, 64});
    REQUIRE(a.min_value() >= 0.0f);
    REQUIRE(a.max_value() <= 1.0f);
    const Tensor<float> c = render_toy_image<float>(3, 18, 42);
    REQUIRE_FALSE(a == c);  // in-class variation
    const Tensor<float> d = render_toy_image<float>(4, 17, 42);
    REQUIRE_FALSE(a == d);  // cross-class variation
}

TEST_CASE("toy dataset writer emits the declared counts and three splits") {
    const fs::path dir = fs::temp_directory_path() / "advret_gen_test";
    fs::remove_all(dir);
    ToyDataConfig cfg;
    cfg.classes = 5;
    cfg.per_class = 16;
    cfg.image_size = 32;
    cfg.seed = 3;
    const ToyDatasetSummary s = write_toy_dataset(dir, cfg);
    REQUIRE(s.total == 80);
    REQUIRE(s.train + s.gallery + s.query == 80);
    REQUIRE(s.train == 5 * 8);
    REQUIRE(s.query >= 5);

    DatasetManifest m = DatasetManifest::load(s.manifest_path);
    REQUIRE(m.rows.size() == 80);
    REQUIRE_NOTHROW(m.validate(true));
    REQUIRE(m.count(kSplitTrain) == static_cast<std::size_t>(s.train));
    REQUIRE(m.count(kSplitQuery) == static_cast<std::size_t>(s.query));
    fs::remove_all(dir);
}

TEST_CASE("same seed produces identical dataset files") {
    const fs::path d1 = fs::temp_directory_path() / "advret_gen_a";
    const fs::path d2 = fs::temp_directory_path() / "advret_gen_b";
    fs::remove_all(d1);
    fs::remove_all(d2);
    ToyDataConfig cfg;
    cfg.classes = 2;
    cfg.per_class = 8;
    cfg.image_size = 32;
    cfg.seed = 9;
    write_toy_dataset(d1, cfg);
    write_toy_dataset(d2, cfg);
    for (const auto& entry : fs::recursive_directory_iterator(d1)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), d1);
        std::ifstream f1(entry.path(), std::ios::binary), f2(d2 / rel, std::ios::binary);
        const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        INFO(rel.string());
        REQUIRE(b1 == b2);
    }
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("degenerate generation configs are rejected") {
    ToyDataConfig zero;
    zero.classes = 0;
    REQUIRE_THROWS_AS(zero.validate(), ConfigError);
    ToyDataConfig tiny;
    tiny.per_class = 2;
    REQUIRE_THROWS_AS(tiny.validate(), ConfigError);
}

TEST_CASE("manifest parsing and validation errors") {
    const fs::path dir = fs::temp_directory_path() / "advret_manifest_test";
    fs::create_directories(dir / "images");
    save_ppm(dir / "images/a.ppm", Tensor<float>::full({3, 16, 16}, 0.5f));
    save_ppm(dir / "images/b.ppm", Tensor<float>::full({3, 16, 16}, 0.6f));

    auto write_manifest = [&](const std::string& body) {
        std::ofstream out(dir / "manifest.csv", std::ios::trunc);
        out << body;
    };

    write_manifest("path,label,split\nimages/a.ppm,1,gallery\nimages/b.ppm,1,query\n");
    REQUIRE_NOTHROW(DatasetManifest::load(dir / "manifest.csv").validate(true));

    // Unlabeled train rows are allowed; unlabeled query rows are not.
    write_manifest("path,label,split\nimages/a.ppm,,train\nimages/b.ppm,1,gallery\n");
    REQUIRE_NOTHROW(DatasetManifest::load(dir / "manifest.csv").validate(true));
    write_manifest("path,label,split\nimages/a.ppm,,query\nimages/b.ppm,1,gallery\n");
    REQUIRE_THROWS_AS(DatasetManifest::load(dir / "manifest.csv").validate(false), ConfigError);

    // A query label absent from the gallery names the label.
    write_manifest("path,label,split\nimages/a.ppm,7,query\nimages/b.ppm,1,gallery\n");
    try {
        DatasetManifest::load(dir / "manifest.csv").validate(false);
        FAIL("expected validation failure");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("'7'") != std::string::npos);
    }

    write_manifest("path,label,split\nimages/a.ppm,1,holdout\n");
    REQUIRE_THROWS_AS(DatasetManifest::load(dir / "manifest.csv").validate(false), ConfigError);
    write_manifest("wrong,header,here\n");
    REQUIRE_THROWS_AS(DatasetManifest::load(dir / "manifest.csv"), IoError);
    write_manifest("path,label,split\nimages/missing.ppm,1,gallery\n");
    REQUIRE_THROWS_AS(DatasetManifest::load(dir / "manifest.csv").validate(true), ConfigError);

    fs::remove_all(dir);
}

TEST_CASE("split loading resizes and aligns ids with labels") {
    const fs::path dir = fs::temp_directory_path() / "advret_split_test";
    fs::remove_all(dir);
    ToyDataConfig cfg;
    cfg.classes = 2;
    cfg.per_class = 8;
    cfg.image_size = 32;
    write_toy_dataset(dir, cfg);
    DatasetManifest m = DatasetManifest::load(dir / "manifest.csv");
    const LoadedSplit<float> q = load_split<float>(m, kSplitQuery, 16);
    REQUIRE(q.count() > 0);
    REQUIRE(q.images.h() == 16);
    REQUIRE(q.ids.size() == static_cast<std::size_t>(q.count()));
    REQUIRE(q.labels.size() == q.ids.size());
    fs::remove_all(dir);
}
