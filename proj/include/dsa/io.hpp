#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsa/cloud.hpp"
#include "dsa/matrix.hpp"

namespace dsa {

/// Shortest decimal form that round-trips a double exactly, so reruns of a
/// command produce byte-identical files.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string to_csv(const DenseMatrix& m) {
    std::string out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out += ',';
            out += format_double(m(i, j));
        }
        out += '\n';
    }
    return out;
}

/// Write via a temporary file in the same directory, then rename, so a
/// crashed run never leaves a half-written artifact behind.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    if (!dir.empty() && !fs::exists(dir)) fs::create_directories(dir);
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for writing: " + tmp.string());
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline void write_csv(const std::filesystem::path& path, const DenseMatrix& m) {
    write_file_atomic(path, to_csv(m));
}

/// Plain CSV of decimal floats, one matrix row per line, no header.
inline DenseMatrix read_csv_matrix(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    std::vector<double> data;
    std::size_t rows = 0, cols = 0;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::size_t row_cols = 0;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                data.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw std::runtime_error("bad number '" + cell + "' in " + path.string());
            }
            ++row_cols;
        }
        if (rows == 0) {
            cols = row_cols;
        } else if (row_cols != cols) {
            throw std::runtime_error("ragged CSV in " + path.string());
        }
        ++rows;
    }
    if (rows == 0) throw std::runtime_error("empty CSV: " + path.string());
    return DenseMatrix(rows, cols, std::move(data));
}

/// Point cloud CSV: one point per line, d columns.
inline ParticleCloud read_csv_cloud(const std::filesystem::path& path) {
    return ParticleCloud(read_csv_matrix(path));
}

inline void write_csv(const std::filesystem::path& path, const ParticleCloud& cloud) {
    write_csv(path, cloud.positions);
}

} // namespace dsa
