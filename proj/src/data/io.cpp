#include "dmad/data/io.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <system_error>

namespace dmad::data {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void atomic_write(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw DataError(path.parent_path().string() + ": cannot create directory: " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError(tmp.string() + ": cannot open for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw DataError(tmp.string() + ": write failed");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw DataError(path.string() + ": rename failed: " + ec.message());
}

namespace {

class HeaderReader {
public:
    HeaderReader(const std::string& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError(name_ + ": " + what + " at byte offset " + std::to_string(pos_));
    }

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    int64_t number(const char* what) {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            fail(std::string("expected ") + what);
        }
        int64_t v = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > (int64_t{1} << 31)) fail(std::string(what) + " too large");
            ++pos_;
        }
        return v;
    }

    size_t& pos() { return pos_; }

private:
    const std::string& bytes_;
    std::string name_;
    size_t pos_ = 0;
};

}  // namespace

GrayImage read_pgm(const fs::path& path) {
    const std::string bytes = read_file(path);
    HeaderReader r(bytes, path.string());
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') r.fail("missing P5 magic");
    r.pos() = 2;
    GrayImage img;
    img.width = r.number("width");
    img.height = r.number("height");
    const int64_t maxval = r.number("maxval");
    if (img.width < 1 || img.height < 1) r.fail("empty image");
    if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval));
    if (r.pos() >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos()]))) {
        r.fail("expected whitespace after header");
    }
    ++r.pos();
    const auto count = static_cast<size_t>(img.width * img.height);
    if (bytes.size() - r.pos() < count) {
        r.pos() = bytes.size();
        r.fail("truncated pixel data (need " + std::to_string(count) + " bytes)");
    }
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos()),
                      bytes.begin() + static_cast<std::ptrdiff_t>(r.pos() + count));
    return img;
}

std::string encode_pgm(const GrayImage& image) {
    if (image.pixels.size() != static_cast<size_t>(image.width * image.height)) {
        throw std::invalid_argument("encode_pgm: pixel count does not match dimensions");
    }
    std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    out.append(image.pixels.begin(), image.pixels.end());
    return out;
}

void write_pgm(const fs::path& path, const GrayImage& image) { atomic_write(path, encode_pgm(image)); }

namespace {

uint32_t be32(const std::string& bytes, size_t offset, const fs::path& path) {
    if (offset + 4 > bytes.size()) throw DataError(path.string() + ": truncated header at byte offset " + std::to_string(offset));
    return (uint32_t(uint8_t(bytes[offset])) << 24) | (uint32_t(uint8_t(bytes[offset + 1])) << 16) |
           (uint32_t(uint8_t(bytes[offset + 2])) << 8) | uint32_t(uint8_t(bytes[offset + 3]));
}

}  // namespace

std::vector<GrayImage> read_idx_images(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (be32(bytes, 0, path) != 0x00000803) throw DataError(path.string() + ": bad idx image magic at byte offset 0");
    const uint32_t n = be32(bytes, 4, path), h = be32(bytes, 8, path), w = be32(bytes, 12, path);
    const size_t need = 16 + size_t(n) * h * w;
    if (bytes.size() < need) {
        throw DataError(path.string() + ": truncated pixel data at byte offset " + std::to_string(bytes.size()));
    }
    std::vector<GrayImage> out(n);
    for (uint32_t i = 0; i < n; ++i) {
        out[i].height = h;
        out[i].width = w;
        const size_t start = 16 + size_t(i) * h * w;
        out[i].pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                             bytes.begin() + static_cast<std::ptrdiff_t>(start + size_t(h) * w));
    }
    return out;
}

std::vector<uint8_t> read_idx_labels(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (be32(bytes, 0, path) != 0x00000801) throw DataError(path.string() + ": bad idx label magic at byte offset 0");
    const uint32_t n = be32(bytes, 4, path);
    if (bytes.size() < 8 + size_t(n)) {
        throw DataError(path.string() + ": truncated labels at byte offset " + std::to_string(bytes.size()));
    }
    return {bytes.begin() + 8, bytes.begin() + 8 + n};
}

}  // namespace dmad::data
