#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmad::data {

// Malformed or unreadable input; what() names the file and, where known, the
// byte offset of the problem.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GrayImage {
    int64_t height = 0, width = 0;
    std::vector<uint8_t> pixels;  // row-major

    bool operator==(const GrayImage&) const = default;
};

// Binary (P5) portable graymap, maxval 255.
GrayImage read_pgm(const std::filesystem::path& path);
std::string encode_pgm(const GrayImage& image);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

// Writes to a sibling temporary file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// Big-endian IDX files as distributed with MNIST (ubyte images / labels).
std::vector<GrayImage> read_idx_images(const std::filesystem::path& path);
std::vector<uint8_t> read_idx_labels(const std::filesystem::path& path);

}  // namespace dmad::data
