#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "advgen/error.hpp"
#include "advgen/tensor.hpp"

namespace advgen {

namespace detail {

inline std::string path_extension(const std::string& path) {
    const auto pos = path.rfind('.');
    if (pos == std::string::npos) return "";
    std::string ext = path.substr(pos + 1);
    for (char& c : ext) c = char(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

/// Reads one whitespace-delimited netpbm header token, skipping # comments.
inline std::string next_header_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (!std::isspace(c)) {
            tok.push_back(char(c));
            while ((c = in.peek()) != EOF && !std::isspace(c)) {
                tok.push_back(char(in.get()));
            }
            return tok;
        }
    }
    return tok;
}

inline std::size_t parse_dim(const std::string& tok, const std::string& path) {
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
        throw FormatError(path + ": malformed header token '" + tok + "'");
    }
    const unsigned long v = std::stoul(tok);
    if (v == 0) throw FormatError(path + ": zero image dimension");
    return std::size_t(v);
}

inline std::uint8_t quantize_255(double v) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    // round half up
    return std::uint8_t(std::floor(clamped * 255.0 + 0.5));
}

inline float read_f32_le(const unsigned char* p) {
    std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

inline void write_f32_le(unsigned char* p, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    p[0] = (unsigned char)(bits & 0xFF);
    p[1] = (unsigned char)((bits >> 8) & 0xFF);
    p[2] = (unsigned char)((bits >> 16) & 0xFF);
    p[3] = (unsigned char)((bits >> 24) & 0xFF);
}

}  // namespace detail

/// Loads PGM (P5) or PPM (P6) with maxval 255, or PFM (Pf/PF). Grayscale
/// formats give HxW tensors in [0,1]; color gives planar 3xHxW.
inline Tensor load_image(const std::string& path) {
    const std::string ext = detail::path_extension(path);
    if (ext != "pgm" && ext != "ppm" && ext != "pfm") {
        throw FormatError(path + ": unsupported image extension '" + ext + "'");
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);

    const std::string magic = detail::next_header_token(in);

    if (ext == "pgm" || ext == "ppm") {
        const std::string expected = ext == "pgm" ? "P5" : "P6";
        if (magic != expected) {
            throw FormatError(path + ": expected " + expected + " magic, got '" + magic + "'");
        }
        const std::size_t w = detail::parse_dim(detail::next_header_token(in), path);
        const std::size_t h = detail::parse_dim(detail::next_header_token(in), path);
        const std::size_t maxval = detail::parse_dim(detail::next_header_token(in), path);
        if (maxval != 255) {
            throw FormatError(path + ": unsupported maxval " + std::to_string(maxval));
        }
        in.get();  // single whitespace after maxval
        const std::size_t channels = ext == "pgm" ? 1 : 3;
        std::vector<unsigned char> raw(w * h * channels);
        in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
        if (std::size_t(in.gcount()) != raw.size()) {
            throw FormatError(path + ": truncated pixel data");
        }
        if (channels == 1) {
            Tensor t(Shape{h, w});
            for (std::size_t i = 0; i < raw.size(); ++i) t[i] = double(raw[i]) / 255.0;
            return t;
        }
        Tensor t(Shape{3, h, w});
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                for (std::size_t c = 0; c < 3; ++c) {
                    t.at(c, y, x) = double(raw[(y * w + x) * 3 + c]) / 255.0;
                }
            }
        }
        return t;
    }

    // PFM
    if (magic != "Pf" && magic != "PF") {
        throw FormatError(path + ": expected Pf/PF magic, got '" + magic + "'");
    }
    const std::size_t w = detail::parse_dim(detail::next_header_token(in), path);
    const std::size_t h = detail::parse_dim(detail::next_header_token(in), path);
    const std::string scale_tok = detail::next_header_token(in);
    double scale = 0.0;
    try {
        scale = std::stod(scale_tok);
    } catch (const std::exception&) {
        throw FormatError(path + ": malformed scale '" + scale_tok + "'");
    }
    if (scale == 0.0) throw FormatError(path + ": zero scale");
    const bool little_endian = scale < 0.0;
    in.get();
    const std::size_t channels = magic == "Pf" ? 1 : 3;
    std::vector<unsigned char> raw(w * h * channels * 4);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (std::size_t(in.gcount()) != raw.size()) {
        throw FormatError(path + ": truncated pixel data");
    }
    Tensor t = channels == 1 ? Tensor(Shape{h, w}) : Tensor(Shape{3, h, w});
    // PFM scanlines run bottom to top.
    for (std::size_t row = 0; row < h; ++row) {
        const std::size_t y = h - 1 - row;
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < channels; ++c) {
                unsigned char bytes[4];
                const unsigned char* src = &raw[((row * w + x) * channels + c) * 4];
                if (little_endian) {
                    std::memcpy(bytes, src, 4);
                } else {
                    bytes[0] = src[3];
                    bytes[1] = src[2];
                    bytes[2] = src[1];
                    bytes[3] = src[0];
                }
                const double v = double(detail::read_f32_le(bytes));
                if (channels == 1) {
                    t.at(y, x) = v;
                } else {
                    t.at(c, y, x) = v;
                }
            }
        }
    }
    return t;
}

/// Saves a tensor as PGM/PPM (8-bit, round-half-up) or PFM (float32,
/// little-endian). Values are clamped to [0,1] first. HxW tensors go to
/// PGM/Pf, 3xHxW to PPM/PF.
inline void save_image(const Tensor& t, const std::string& path) {
    const std::string ext = detail::path_extension(path);
    const auto& s = t.shape();
    const bool gray = s.size() == 2;
    const bool color = s.size() == 3 && s[0] == 3;
    if (!gray && !color) {
        throw FormatError(path + ": only HxW or 3xHxW tensors can be saved, got " +
                          shape_to_string(s));
    }
    const std::size_t h = gray ? s[0] : s[1];
    const std::size_t w = gray ? s[1] : s[2];

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image: " + path);

    if (ext == "pgm" || ext == "ppm") {
        if (ext == "pgm" && !gray) throw FormatError(path + ": PGM requires an HxW tensor");
        if (ext == "ppm" && !color) throw FormatError(path + ": PPM requires a 3xHxW tensor");
        out << (ext == "pgm" ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
        std::vector<unsigned char> raw;
        raw.reserve(t.size());
        if (gray) {
            for (std::size_t i = 0; i < t.size(); ++i) raw.push_back(detail::quantize_255(t[i]));
        } else {
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    for (std::size_t c = 0; c < 3; ++c) {
                        raw.push_back(detail::quantize_255(t.at(c, y, x)));
                    }
                }
            }
        }
        out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
    } else if (ext == "pfm") {
        out << (gray ? "Pf" : "PF") << "\n" << w << " " << h << "\n-1.0\n";
        const std::size_t channels = gray ? 1 : 3;
        std::vector<unsigned char> raw(w * h * channels * 4);
        for (std::size_t row = 0; row < h; ++row) {
            const std::size_t y = h - 1 - row;
            for (std::size_t x = 0; x < w; ++x) {
                for (std::size_t c = 0; c < channels; ++c) {
                    const double v = std::clamp(gray ? t.at(y, x) : t.at(c, y, x), 0.0, 1.0);
                    detail::write_f32_le(&raw[((row * w + x) * channels + c) * 4], float(v));
                }
            }
        }
        out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
    } else {
        throw FormatError(path + ": unsupported image extension '" + ext + "'");
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace advgen
