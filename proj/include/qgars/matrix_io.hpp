#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace qgars {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Binary matrix container: 16-byte header (magic "QGMX", version, rows,
// cols as little-endian u32) followed by rows*cols little-endian f64 values
// in row-major order.
inline constexpr std::uint32_t kMatrixMagic = 0x584D4751;  // "QGMX"
inline constexpr std::uint32_t kMatrixVersion = 1;

void write_matrix_binary(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_binary(const std::filesystem::path& path);

// CSV with a header row. When `labels` is non-empty a leading `label`
// column is written.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m,
                      const std::vector<std::string>& header,
                      const std::vector<int>& labels = {});

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace qgars
