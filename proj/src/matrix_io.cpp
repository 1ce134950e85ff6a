#include "qgars/matrix_io.hpp"

#include "qgars/error.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>

namespace qgars {

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    std::memcpy(&v, p, 4);
    return v;
}

}  // namespace

void write_matrix_binary(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
    put_u32(out, kMatrixMagic);
    put_u32(out, kMatrixVersion);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!out) fail(ErrorCode::io, "write failed for " + path.string());
}

Matrix read_matrix_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open " + path.string());
    std::array<unsigned char, 16> header{};
    in.read(reinterpret_cast<char*>(header.data()), 16);
    if (in.gcount() != 16) fail(ErrorCode::format, path.string() + ": truncated header");
    const auto magic = get_u32(header.data());
    if (magic != kMatrixMagic) fail(ErrorCode::format, path.string() + ": bad magic " + std::to_string(magic));
    const auto version = get_u32(header.data() + 4);
    if (version != kMatrixVersion) fail(ErrorCode::format, path.string() + ": unsupported version " + std::to_string(version));
    const auto rows = get_u32(header.data() + 8);
    const auto cols = get_u32(header.data() + 12);
    Matrix m(rows, cols);
    const auto bytes = static_cast<std::streamsize>(m.size() * sizeof(double));
    in.read(reinterpret_cast<char*>(m.data()), bytes);
    if (in.gcount() != bytes) {
        fail(ErrorCode::format, path.string() + ": expected " + std::to_string(bytes) + " payload bytes, got " +
                                    std::to_string(in.gcount()));
    }
    return m;
}

std::string format_double(double v) {
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m, const std::vector<std::string>& header,
                      const std::vector<int>& labels) {
    if (!header.empty() && static_cast<Eigen::Index>(header.size()) != m.cols()) {
        fail(ErrorCode::shape, "csv header has " + std::to_string(header.size()) + " names for " +
                                   std::to_string(m.cols()) + " columns");
    }
    if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != m.rows()) {
        fail(ErrorCode::shape, "csv label count does not match row count");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
    if (!header.empty()) {
        bool first = true;
        if (!labels.empty()) {
            out << "label";
            first = false;
        }
        for (const auto& h : header) {
            if (!first) out << ',';
            out << h;
            first = false;
        }
        out << '\n';
    }
    std::string line;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        line.clear();
        if (!labels.empty()) line += std::to_string(labels[static_cast<std::size_t>(r)]);
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (!line.empty() || c > 0) line += ',';
            line += format_double(m(r, c));
        }
        out << line << '\n';
    }
    if (!out) fail(ErrorCode::io, "write failed for " + path.string());
}

}  // namespace qgars
