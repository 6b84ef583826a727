#include "isdiff/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace isdiff {

std::uint8_t to_byte(double v) {
    const double scaled = std::floor((v + 1.0) / 2.0 * 255.0 + 0.5);
    if (!(scaled > 0.0)) {
        return 0;
    }
    if (scaled >= 255.0) {
        return 255;
    }
    return static_cast<std::uint8_t>(scaled);
}

double from_byte(std::uint8_t b) {
    return static_cast<double>(b) / 255.0 * 2.0 - 1.0;
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& is) {
    std::string token;
    int ch;
    while ((ch = is.get()) != EOF) {
        if (ch == '#') {
            while ((ch = is.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!token.empty()) {
                return token;
            }
            continue;
        }
        token.push_back(static_cast<char>(ch));
    }
    if (token.empty()) {
        throw Error(ErrorCode::io, "truncated netpbm header");
    }
    return token;
}

int header_int(std::istream& is, const char* what) {
    const std::string token = header_token(is);
    try {
        std::size_t used = 0;
        const int v = std::stoi(token, &used);
        if (used != token.size()) {
            throw Error(ErrorCode::io, "");
        }
        return v;
    } catch (...) {
        throw Error(ErrorCode::io, std::string("malformed netpbm ") + what + " '" + token + "'");
    }
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::io, "cannot open " + path.string());
    }
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::io, "cannot write " + path.string());
    }
    return out;
}

}  // namespace

PixelGrid read_image(std::istream& is) {
    const std::string magic = header_token(is);
    int channels = 0;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw Error(ErrorCode::io, "unsupported netpbm magic '" + magic + "' (need P5 or P6)");
    }
    const int width = header_int(is, "width");
    const int height = header_int(is, "height");
    const int maxval = header_int(is, "maxval");
    if (width < 1 || height < 1) {
        throw Error(ErrorCode::io, "netpbm image has non-positive size");
    }
    if (maxval != 255) {
        throw Error(ErrorCode::io, "netpbm maxval must be 255, got " + std::to_string(maxval));
    }
    const Shape shape{height, width, channels};
    std::vector<char> bytes(shape.size());
    is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw Error(ErrorCode::io, "netpbm pixel data truncated");
    }
    PixelGrid g(shape);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        g[i] = from_byte(static_cast<std::uint8_t>(bytes[i]));
    }
    return g;
}

PixelGrid read_image(const std::filesystem::path& path) {
    auto in = open_in(path);
    try {
        return read_image(in);
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

void write_image(std::ostream& os, const PixelGrid& g) {
    if (g.channels() != 1 && g.channels() != 3) {
        throw Error(ErrorCode::dimension, "netpbm output needs 1 or 3 channels");
    }
    os << (g.channels() == 1 ? "P5" : "P6") << '\n' << g.width() << ' ' << g.height() << "\n255\n";
    std::vector<char> bytes(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        bytes[i] = static_cast<char>(to_byte(g[i]));
    }
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_image(const std::filesystem::path& path, const PixelGrid& g) {
    auto out = open_out(path);
    write_image(out, g);
    if (!out) {
        throw Error(ErrorCode::io, "failed writing " + path.string());
    }
}

Mask read_mask(const std::filesystem::path& path) {
    const PixelGrid g = read_image(path);
    if (g.channels() != 1) {
        throw Error(ErrorCode::io, path.string() + ": mask must be a P5 (grayscale) image");
    }
    std::vector<std::uint8_t> bits(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        bits[i] = to_byte(g[i]) >= 128 ? 1 : 0;
    }
    return Mask(g.height(), g.width(), std::move(bits));
}

void write_mask(const std::filesystem::path& path, const Mask& m) {
    PixelGrid g(Shape{m.height(), m.width(), 1});
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        g[p] = m.known(p) ? 1.0 : -1.0;
    }
    write_image(path, g);
}

}  // namespace isdiff
