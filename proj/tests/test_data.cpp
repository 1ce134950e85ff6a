#include "doctest.h"

#include "qgars/data.hpp"
#include "qgars/error.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using namespace qgars;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "qgars_test_data";
    fs::create_directories(dir);
    return dir / name;
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

// Writes an IDX pair of `labels.size()` images of rows x cols, pixel value
// for image i = fill[i].
void write_idx(const fs::path& img, const fs::path& lab, const std::vector<unsigned char>& labels,
               const std::vector<unsigned char>& fill, int rows, int cols, std::uint32_t img_magic = 2051) {
    std::ofstream oi(img, std::ios::binary | std::ios::trunc);
    put_be32(oi, img_magic);
    put_be32(oi, static_cast<std::uint32_t>(labels.size()));
    put_be32(oi, static_cast<std::uint32_t>(rows));
    put_be32(oi, static_cast<std::uint32_t>(cols));
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (int p = 0; p < rows * cols; ++p) oi.put(static_cast<char>(fill[i]));
    std::ofstream ol(lab, std::ios::binary | std::ios::trunc);
    put_be32(ol, 2049);
    put_be32(ol, static_cast<std::uint32_t>(labels.size()));
    ol.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

// Binary PGM (gray) or PPM (RGB) written by hand.
void write_pnm(const fs::path& path, int w, int h, const std::vector<unsigned char>& bytes, bool rgb) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << (rgb ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("idx loader filters digits and scales pixels") {
    const auto img = scratch("a-images");
    const auto lab = scratch("a-labels");
    write_idx(img, lab, {0, 7, 1, 3, 1, 0}, {0, 9, 255, 9, 51, 0}, 2, 3);
    const auto ds = load_mnist_idx(img, lab);
    REQUIRE(ds.size() == 4);
    CHECK(ds.images.cols() == 6);
    CHECK(ds.labels == std::vector<int>{0, 1, 1, 0});
    CHECK(ds.images.row(0).norm() == 0.0);  // all-zero image stays zero
    CHECK(ds.images(1, 0) == 1.0);
    CHECK(ds.images(2, 5) == doctest::Approx(0.2));
    CHECK(load_mnist_idx(img, lab, 2).size() == 2);
}

TEST_CASE("idx loader reports bad magic and truncation") {
    const auto img = scratch("b-images");
    const auto lab = scratch("b-labels");
    write_idx(img, lab, {0, 1}, {1, 2}, 2, 2, 1234);
    try {
        (void)load_mnist_idx(img, lab);
        FAIL("expected format error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::format);
        CHECK(std::string(e.what()).find("1234") != std::string::npos);
    }
    write_idx(img, lab, {0, 1}, {1, 2}, 2, 2);
    fs::resize_file(img, fs::file_size(img) - 1);
    try {
        (void)load_mnist_idx(img, lab);
        FAIL("expected truncation error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::format);
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
    CHECK_THROWS_AS((void)load_mnist_idx(scratch("missing"), lab), Error);
}

TEST_CASE("bundled MNIST 0/1 subset loads") {
    const fs::path dir = fs::path(QGARS_TEST_DATA_DIR) / "mnist01";
    const auto ds = load_mnist_idx(dir / "images-idx3-ubyte", dir / "labels-idx1-ubyte");
    CHECK(ds.size() == 2128);
    CHECK(ds.images.cols() == 784);
    CHECK(std::count(ds.labels.begin(), ds.labels.end(), 1) == 1127);
    ds.validate();
    const auto ten = load_mnist_idx(dir / "images-idx3-ubyte", dir / "labels-idx1-ubyte", 10);
    CHECK(ten.size() == 10);
}

TEST_CASE("full MNIST training split has 12665 zeros and ones") {
    const char* env = std::getenv("QGARS_MNIST_DIR");
    if (env == nullptr) {
        MESSAGE("QGARS_MNIST_DIR not set; skipping full-split count");
        return;
    }
    const fs::path dir(env);
    const auto lab_path = dir / "train-labels-idx1-ubyte";
    // Independent count straight from the label bytes.
    std::ifstream in(lab_path, std::ios::binary);
    std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    std::size_t raw = 0;
    for (std::size_t i = 8; i < bytes.size(); ++i) raw += bytes[i] <= 1;
    const auto ds = load_mnist_idx(dir / "train-images-idx3-ubyte", lab_path);
    CHECK(ds.size() == raw);
    CHECK(ds.size() == 12665);
}

TEST_CASE("synthetic polyps are balanced, deterministic and brighter when positive") {
    const auto a = generate_synthetic_polyps(100, 7);
    CHECK(a.size() == 100);
    CHECK(std::count(a.labels.begin(), a.labels.end(), 1) == 50);
    CHECK(a.images.cols() == 32 * 32);
    a.validate();
    const auto b = generate_synthetic_polyps(100, 7);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    CHECK(generate_synthetic_polyps(100, 8).images != a.images);
    // Sample i does not depend on n.
    CHECK(generate_synthetic_polyps(10, 7).images.row(9) == a.images.row(9));
    CHECK_THROWS_AS((void)generate_synthetic_polyps(0, 1), Error);

    std::vector<double> gaps;
    for (std::uint64_t seed : {1, 2, 3, 4}) {
        const auto ds = generate_synthetic_polyps(500, seed);
        double pos = 0, neg = 0;
        for (std::size_t i = 0; i < ds.size(); ++i) (ds.labels[i] ? pos : neg) += ds.images.row(static_cast<Eigen::Index>(i)).mean();
        gaps.push_back((pos - neg) / 250.0);
        CHECK(gaps.back() > 0.0);
    }
    const double mean_gap = (gaps[0] + gaps[1] + gaps[2] + gaps[3]) / 4.0;
    for (double g : gaps) CHECK(std::abs(g - mean_gap) <= 0.2 * mean_gap);
}

TEST_CASE("area resampling averages covered pixels") {
    Matrix img(2, 2);
    img << 0.1, 0.2, 0.3, 0.8;
    CHECK(area_resample(img, 1, 1)(0, 0) == doctest::Approx(0.35));
    // 3 -> 2 along one axis: weights (1, 0.5) and (0.5, 1) over 1.5.
    Matrix row(1, 3);
    row << 3.0, 6.0, 9.0;
    const Matrix r = area_resample(row, 1, 2);
    CHECK(r(0, 0) == doctest::Approx((3.0 + 0.5 * 6.0) / 1.5));
    CHECK(r(0, 1) == doctest::Approx((0.5 * 6.0 + 9.0) / 1.5));
    // Upsampling replicates.
    const Matrix up = area_resample(img, 4, 4);
    CHECK(up(3, 3) == doctest::Approx(0.8));
    CHECK(up(0, 1) == doctest::Approx(0.1));
}

TEST_CASE("image patches from a manifest") {
    const auto dir = scratch("patches");
    fs::create_directories(dir);
    write_pnm(dir / "white.pgm", 2, 2, {255, 255, 255, 255}, false);
    write_pnm(dir / "quad.pgm", 2, 2, {0, 51, 102, 255}, false);
    // Wide RGB image: centre crop keeps the middle 2x2 columns.
    write_pnm(dir / "wide.ppm", 4, 2,
              {0, 0, 0, 255, 0, 0, 255, 0, 0, 0, 0, 0, 0, 0, 0, 0, 255, 0, 0, 255, 0, 0, 0, 0}, true);
    write_pnm(dir / "dark.pgm", 1, 1, {0}, false);
    const auto manifest = dir / "manifest.csv";
    {
        std::ofstream m(manifest);
        m << "path,label\nwhite.pgm,1\nquad.pgm,0\nwide.ppm,1\n\ndark.pgm,0\n";
    }
    const auto ds = load_image_patches(dir, manifest, 1);
    REQUIRE(ds.size() == 4);
    CHECK(ds.labels == std::vector<int>{1, 0, 1, 0});
    CHECK(ds.images(0, 0) == 1.0);
    CHECK(ds.images(1, 0) == doctest::Approx((0 + 51 + 102 + 255) / 4.0 / 255.0));
    CHECK(ds.images(2, 0) == doctest::Approx((0.299 * 255 * 2 + 0.587 * 255 * 2) / 4.0 / 255.0));
    CHECK(ds.images(3, 0) == 0.0);

    {
        std::ofstream m(manifest);
        m << "white.pgm,1\nnot-there.pgm,0\n";
    }
    CHECK_THROWS_AS((void)load_image_patches(dir, manifest, 4), Error);
    CHECK_THROWS_AS((void)load_image_patches(dir, dir / "nope.csv", 4), Error);
}

TEST_CASE("stratified split") {
    auto ds = generate_synthetic_polyps(240, 3, PolypConfig{8});
    const auto [train, test] = split_train_test(ds, 200, 40, 11);
    CHECK(train.size() == 200);
    CHECK(test.size() == 40);
    const auto pos_train = std::count(train.labels.begin(), train.labels.end(), 1);
    const auto pos_test = std::count(test.labels.begin(), test.labels.end(), 1);
    CHECK(std::abs(pos_train - 100) <= 1);
    CHECK(std::abs(pos_test - 20) <= 1);
    CHECK(std::abs(pos_train / 200.0 - pos_test / 40.0) <= 1.0 / 40.0);

    // Disjoint: every image row is unique in this data, so compare rows.
    for (Eigen::Index i = 0; i < test.images.rows(); ++i)
        for (Eigen::Index j = 0; j < train.images.rows(); ++j) REQUIRE(test.images.row(i) != train.images.row(j));

    const auto [train2, test2] = split_train_test(ds, 200, 40, 11);
    CHECK(train2.images == train.images);
    CHECK(test2.labels == test.labels);
    CHECK_THROWS_AS((void)split_train_test(ds, 200, 0, 1), Error);
    CHECK_THROWS_AS((void)split_train_test(ds, 200, 41, 1), Error);

    // Imbalanced data still yields exact sizes.
    Dataset skew;
    skew.images = Matrix::Zero(30, 2);
    for (int i = 0; i < 30; ++i) skew.labels.push_back(i < 5 ? 1 : 0);
    const auto [a, b] = split_train_test(skew, 20, 10, 2);
    CHECK(a.size() == 20);
    CHECK(b.size() == 10);
    CHECK(std::count(a.labels.begin(), a.labels.end(), 1) + std::count(b.labels.begin(), b.labels.end(), 1) == 5);
}

TEST_CASE("dataset cache round trip") {
    const auto ds = generate_synthetic_polyps(12, 5, PolypConfig{8});
    const auto stem = scratch("cache");
    save_dataset(stem, ds);
    const auto back = load_dataset(stem);
    CHECK(back.images == ds.images);
    CHECK(back.labels == ds.labels);
    CHECK_THROWS_AS((void)load_dataset(scratch("absent")), Error);
}
