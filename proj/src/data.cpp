#include "qgars/data.hpp"

#include "qgars/error.hpp"
#include "qgars/rng.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace qgars {

void Dataset::validate() const {
    if (static_cast<std::size_t>(images.rows()) != labels.size()) {
        fail(ErrorCode::shape, "dataset has " + std::to_string(images.rows()) + " images but " +
                                   std::to_string(labels.size()) + " labels");
    }
    for (int y : labels)
        if (y != 0 && y != 1) fail(ErrorCode::invalid_input, "dataset label " + std::to_string(y) + " is not binary");
    if (images.size() > 0 && (!(images.minCoeff() >= 0.0) || !(images.maxCoeff() <= 1.0))) {
        fail(ErrorCode::invalid_input, "dataset pixels must lie in [0, 1]");
    }
}

// ---------------------------------------------------------------- MNIST

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t max_n,
                       const std::string& split) {
    const auto img = slurp(images);
    const auto lab = slurp(labels);
    if (img.size() < 16) fail(ErrorCode::format, images.string() + ": truncated IDX header");
    if (lab.size() < 8) fail(ErrorCode::format, labels.string() + ": truncated IDX header");
    if (be32(img, 0) != 2051) fail(ErrorCode::format, images.string() + ": bad IDX image magic " + std::to_string(be32(img, 0)));
    if (be32(lab, 0) != 2049) fail(ErrorCode::format, labels.string() + ": bad IDX label magic " + std::to_string(be32(lab, 0)));
    const std::size_t n = be32(img, 4);
    const std::size_t rows = be32(img, 8);
    const std::size_t cols = be32(img, 12);
    const std::size_t pixels = rows * cols;
    if (be32(lab, 4) != n) {
        fail(ErrorCode::format, "IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(be32(lab, 4)) + " labels");
    }
    if (img.size() < 16 + n * pixels) {
        fail(ErrorCode::format, images.string() + ": truncated, expected " + std::to_string(16 + n * pixels) + " bytes, found " +
                                    std::to_string(img.size()));
    }
    if (lab.size() < 8 + n) {
        fail(ErrorCode::format, labels.string() + ": truncated, expected " + std::to_string(8 + n) + " bytes, found " +
                                    std::to_string(lab.size()));
    }
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < n && (max_n == 0 || keep.size() < max_n); ++i)
        if (lab[8 + i] <= 1) keep.push_back(i);

    Dataset ds;
    ds.split = split;
    ds.provenance = "idx:" + images.filename().string();
    ds.images.resize(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(pixels));
    ds.labels.reserve(keep.size());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        const unsigned char* src = img.data() + 16 + keep[r] * pixels;
        for (std::size_t p = 0; p < pixels; ++p) ds.images(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p)) = src[p] / 255.0;
        ds.labels.push_back(lab[8 + keep[r]]);
    }
    return ds;
}

// ---------------------------------------------------------------- synthetic polyps

namespace {

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Bilinear value noise on a lattice with `cell` pixels per cell, in [0, 1].
Matrix value_noise(int size, int cell, Rng& rng) {
    const int lattice = size / cell + 2;
    Matrix grid(lattice, lattice);
    for (Eigen::Index i = 0; i < grid.size(); ++i) grid.data()[i] = rng.uniform();
    Matrix out(size, size);
    for (int y = 0; y < size; ++y) {
        const double fy = static_cast<double>(y) / cell;
        const int gy = static_cast<int>(fy);
        const double ty = smoothstep(0.0, 1.0, fy - gy);
        for (int x = 0; x < size; ++x) {
            const double fx = static_cast<double>(x) / cell;
            const int gx = static_cast<int>(fx);
            const double tx = smoothstep(0.0, 1.0, fx - gx);
            const double top = grid(gy, gx) * (1 - tx) + grid(gy, gx + 1) * tx;
            const double bottom = grid(gy + 1, gx) * (1 - tx) + grid(gy + 1, gx + 1) * tx;
            out(y, x) = top * (1 - ty) + bottom * ty;
        }
    }
    return out;
}

}  // namespace

Dataset generate_synthetic_polyps(int n, std::uint64_t seed, const PolypConfig& config) {
    if (n < 1) fail(ErrorCode::invalid_input, "synthetic polyp count must be >= 1");
    const int s = config.image_size;
    if (s < 4) fail(ErrorCode::invalid_config, "synthetic image size must be >= 4");
    Dataset ds;
    ds.split = "all";
    ds.provenance = "synthetic-polyps seed=" + std::to_string(seed);
    ds.images.resize(n, static_cast<Eigen::Index>(s) * s);
    ds.labels.resize(static_cast<std::size_t>(n));
    const int coarse = std::max(2, s / 4);
    const int fine = std::max(1, s / 8);
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const int label = i % 2;
        Matrix img = 0.2 + 0.4 * (0.65 * value_noise(s, coarse, rng) + 0.35 * value_noise(s, fine, rng)).array();
        if (label == 1) {
            const double margin = 0.5 * (1.0 - config.centre_span) * s;
            const double cx = rng.uniform(margin, s - margin);
            const double cy = rng.uniform(margin, s - margin);
            const double a = 0.5 * s * rng.uniform(config.axis_min, config.axis_max);
            const double b = 0.5 * s * rng.uniform(config.axis_min, config.axis_max);
            const double theta = rng.uniform(0.0, M_PI);
            const double boost = rng.uniform(config.boost_min, config.boost_max);
            const double c = std::cos(theta);
            const double sn = std::sin(theta);
            for (int y = 0; y < s; ++y) {
                for (int x = 0; x < s; ++x) {
                    const double dx = x + 0.5 - cx;
                    const double dy = y + 0.5 - cy;
                    const double u = (c * dx + sn * dy) / a;
                    const double v = (-sn * dx + c * dy) / b;
                    const double r = std::sqrt(u * u + v * v);
                    img(y, x) += boost * (1.0 - smoothstep(0.8, 1.2, r));
                }
            }
        }
        for (Eigen::Index p = 0; p < img.size(); ++p) {
            img.data()[p] = std::clamp(img.data()[p] + config.noise_sigma * rng.normal(), 0.0, 1.0);
        }
        ds.images.row(i) = Eigen::Map<const Eigen::RowVectorXd>(img.data(), img.size());
        ds.labels[static_cast<std::size_t>(i)] = label;
    }
    return ds;
}

// ---------------------------------------------------------------- image patches

Matrix area_resample(const Matrix& image, int out_rows, int out_cols) {
    if (out_rows < 1 || out_cols < 1 || image.rows() < 1 || image.cols() < 1) {
        fail(ErrorCode::invalid_input, "area_resample needs non-empty input and output");
    }
    const double sy = static_cast<double>(image.rows()) / out_rows;
    const double sx = static_cast<double>(image.cols()) / out_cols;
    // Overlap weights of each output cell along one axis.
    auto weights = [](Eigen::Index in, int out, double scale) {
        std::vector<std::vector<std::pair<Eigen::Index, double>>> w(static_cast<std::size_t>(out));
        for (int o = 0; o < out; ++o) {
            const double lo = o * scale;
            const double hi = lo + scale;
            for (auto i = static_cast<Eigen::Index>(std::floor(lo)); i < std::min<Eigen::Index>(in, static_cast<Eigen::Index>(std::ceil(hi))); ++i) {
                const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
                if (overlap > 0) w[static_cast<std::size_t>(o)].emplace_back(i, overlap / scale);
            }
        }
        return w;
    };
    const auto wy = weights(image.rows(), out_rows, sy);
    const auto wx = weights(image.cols(), out_cols, sx);
    Matrix out = Matrix::Zero(out_rows, out_cols);
    for (int oy = 0; oy < out_rows; ++oy)
        for (int ox = 0; ox < out_cols; ++ox) {
            double acc = 0.0;
            for (const auto& [iy, fy] : wy[static_cast<std::size_t>(oy)])
                for (const auto& [ix, fx] : wx[static_cast<std::size_t>(ox)]) acc += fy * fx * image(iy, ix);
            out(oy, ox) = acc;
        }
    return out;
}

namespace {

// 8-bit gray, BGR or BGRA to luma in [0, 1].
Matrix decode_luma(const std::filesystem::path& path) {
    const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) fail(ErrorCode::io, "cannot decode image " + path.string());
    if (raw.depth() != CV_8U) fail(ErrorCode::format, path.string() + ": only 8-bit images are supported");
    const int ch = raw.channels();
    if (ch != 1 && ch != 3 && ch != 4) fail(ErrorCode::format, path.string() + ": unsupported channel count " + std::to_string(ch));
    Matrix out(raw.rows, raw.cols);
    for (int y = 0; y < raw.rows; ++y) {
        const unsigned char* row = raw.ptr<unsigned char>(y);
        for (int x = 0; x < raw.cols; ++x) {
            const unsigned char* p = row + static_cast<std::ptrdiff_t>(x) * ch;
            const double v = ch == 1 ? p[0] : 0.299 * p[2] + 0.587 * p[1] + 0.114 * p[0];
            out(y, x) = v / 255.0;
        }
    }
    return out;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    const auto e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

}  // namespace

Dataset load_image_patches(const std::filesystem::path& directory, const std::filesystem::path& manifest, int patch_size) {
    if (patch_size < 1) fail(ErrorCode::invalid_config, "patch size must be >= 1");
    std::ifstream in(manifest);
    if (!in) fail(ErrorCode::io, "cannot open manifest " + manifest.string());
    std::vector<std::pair<std::string, int>> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) fail(ErrorCode::format, manifest.string() + ":" + std::to_string(line_no) + ": expected path,label");
        const std::string path = trim(line.substr(0, comma));
        const std::string label = trim(line.substr(comma + 1));
        if (line_no == 1 && path == "path" && label == "label") continue;
        if (label != "0" && label != "1") {
            fail(ErrorCode::format, manifest.string() + ":" + std::to_string(line_no) + ": label must be 0 or 1");
        }
        if (path.empty()) fail(ErrorCode::format, manifest.string() + ":" + std::to_string(line_no) + ": empty path");
        entries.emplace_back(path, label == "1" ? 1 : 0);
    }
    if (entries.empty()) fail(ErrorCode::insufficient_data, "manifest " + manifest.string() + " lists no images");

    Dataset ds;
    ds.split = "all";
    ds.provenance = "patches:" + manifest.filename().string();
    ds.images.resize(static_cast<Eigen::Index>(entries.size()), static_cast<Eigen::Index>(patch_size) * patch_size);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto file = directory / entries[i].first;
        if (!std::filesystem::exists(file)) fail(ErrorCode::io, "manifest entry " + entries[i].first + " not found under " + directory.string());
        const Matrix luma = decode_luma(file);
        const auto side = std::min(luma.rows(), luma.cols());
        const Matrix crop = luma.block((luma.rows() - side) / 2, (luma.cols() - side) / 2, side, side);
        const Matrix patch = area_resample(crop, patch_size, patch_size);
        ds.images.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(patch.data(), patch.size()).cwiseMin(1.0).cwiseMax(0.0);
        ds.labels.push_back(entries[i].second);
    }
    return ds;
}

// ---------------------------------------------------------------- split and cache

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, std::size_t n_train, std::size_t n_test,
                                             std::uint64_t seed) {
    data.validate();
    if (n_train == 0 || n_test == 0) fail(ErrorCode::invalid_input, "train and test sizes must both be positive");
    if (n_train + n_test > data.size()) {
        fail(ErrorCode::insufficient_data, "split needs " + std::to_string(n_train + n_test) + " samples, dataset has " +
                                               std::to_string(data.size()));
    }
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
    Rng rng(seed);
    for (auto& c : by_class) rng.shuffle(c);

    const double pos_frac = static_cast<double>(by_class[1].size()) / static_cast<double>(data.size());
    // Positives per split: the proportional share, pushed into the range the
    // class sizes allow. n_train + n_test <= n keeps both ranges non-empty.
    auto positives = [&](std::size_t want, std::size_t pos_left, std::size_t neg_left) {
        const auto target = static_cast<long long>(std::llround(pos_frac * static_cast<double>(want)));
        const long long lo = std::max(0LL, static_cast<long long>(want) - static_cast<long long>(neg_left));
        const long long hi = static_cast<long long>(std::min(want, pos_left));
        return static_cast<std::size_t>(std::clamp(target, lo, hi));
    };
    const std::size_t test_pos = positives(n_test, by_class[1].size(), by_class[0].size());
    const std::size_t train_pos =
        positives(n_train, by_class[1].size() - test_pos, by_class[0].size() - (n_test - test_pos));

    std::vector<std::size_t> test_idx(by_class[1].begin(), by_class[1].begin() + static_cast<std::ptrdiff_t>(test_pos));
    test_idx.insert(test_idx.end(), by_class[0].begin(), by_class[0].begin() + static_cast<std::ptrdiff_t>(n_test - test_pos));
    std::vector<std::size_t> train_idx(by_class[1].begin() + static_cast<std::ptrdiff_t>(test_pos),
                                       by_class[1].begin() + static_cast<std::ptrdiff_t>(test_pos + train_pos));
    train_idx.insert(train_idx.end(), by_class[0].begin() + static_cast<std::ptrdiff_t>(n_test - test_pos),
                     by_class[0].begin() + static_cast<std::ptrdiff_t>(n_test - test_pos + n_train - train_pos));
    rng.shuffle(train_idx);
    rng.shuffle(test_idx);

    auto take = [&](const std::vector<std::size_t>& idx, const char* split) {
        Dataset out;
        out.split = split;
        out.provenance = data.provenance;
        out.images.resize(static_cast<Eigen::Index>(idx.size()), data.images.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            out.images.row(static_cast<Eigen::Index>(i)) = data.images.row(static_cast<Eigen::Index>(idx[i]));
            out.labels.push_back(data.labels[idx[i]]);
        }
        return out;
    };
    return {take(train_idx, "train"), take(test_idx, "test")};
}

void save_dataset(const std::filesystem::path& stem, const Dataset& data) {
    data.validate();
    write_matrix_binary(stem.string() + ".bin", data.images);
    Matrix labels(static_cast<Eigen::Index>(data.size()), 1);
    for (std::size_t i = 0; i < data.size(); ++i) labels(static_cast<Eigen::Index>(i), 0) = data.labels[i];
    write_matrix_binary(stem.string() + ".labels.bin", labels);
}

Dataset load_dataset(const std::filesystem::path& stem) {
    Dataset ds;
    ds.images = read_matrix_binary(stem.string() + ".bin");
    const Matrix labels = read_matrix_binary(stem.string() + ".labels.bin");
    if (labels.cols() != 1 || labels.rows() != ds.images.rows()) fail(ErrorCode::format, stem.string() + ": label file does not match images");
    for (Eigen::Index i = 0; i < labels.rows(); ++i) ds.labels.push_back(static_cast<int>(labels(i, 0)));
    ds.split = stem.filename().string();
    ds.provenance = "cache:" + stem.filename().string();
    ds.validate();
    return ds;
}

}  // namespace qgars
