#pragma once

#include "qgars/matrix_io.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace qgars {

// Flat grayscale images in [0, 1], one per row, with binary labels.
struct Dataset {
    Matrix images;
    std::vector<int> labels;
    std::string split;       // "train", "test" or "all"
    std::string provenance;  // free text describing the source

    std::size_t size() const { return labels.size(); }
    // Throws Error(invalid_input) on out-of-range pixels or labels and
    // Error(shape) when images and labels disagree in length.
    void validate() const;
};

// Reads an IDX image/label pair, keeps digits 0 and 1 in file order and
// scales pixels by 1/255. max_n = 0 keeps every matching sample.
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                       std::size_t max_n = 0, const std::string& split = "train");

struct PolypConfig {
    int image_size = 32;
    double noise_sigma = 0.03;
    double boost_min = 0.25;
    double boost_max = 0.45;
    double axis_min = 0.15;  // full axis length as a fraction of the width
    double axis_max = 0.35;
    double centre_span = 0.6;
};

// Textured backgrounds; odd indices additionally carry a bright feathered
// ellipse and label 1. Sample i depends only on (seed, i).
Dataset generate_synthetic_polyps(int n, std::uint64_t seed, const PolypConfig& config = {});

// Manifest: CSV lines `path,label` (optional `path,label` header), paths
// relative to `directory`. Images are luma-converted, centre-cropped to a
// square and area-resampled to patch_size x patch_size.
Dataset load_image_patches(const std::filesystem::path& directory, const std::filesystem::path& manifest,
                           int patch_size = 32);

// Box-filter resampling of an h x w image; each output pixel is the
// overlap-weighted mean of the input pixels it covers.
Matrix area_resample(const Matrix& image, int out_rows, int out_cols);

// Label-stratified, seed-deterministic disjoint split.
std::pair<Dataset, Dataset> split_train_test(const Dataset& data, std::size_t n_train, std::size_t n_test,
                                             std::uint64_t seed);

// `<stem>.bin` holds the images, `<stem>.labels.bin` an n x 1 label column.
void save_dataset(const std::filesystem::path& stem, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& stem);

}  // namespace qgars
