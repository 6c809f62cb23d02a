#pragma once

// Binary netpbm I/O: P6 (8-bit RGB), P5 (8-bit gray / 16-bit big-endian).

#include "t4t/tensor.hpp"

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace t4t {

struct ImageU8 {
    int w = 0, h = 0, channels = 1;
    std::vector<std::uint8_t> data; // row-major, interleaved
};

struct ImageU16 {
    int w = 0, h = 0;
    std::vector<std::uint16_t> data;
};

namespace detail {

inline int pnm_read_int(std::istream& in) {
    int c = in.get();
    while (c == '#' || std::isspace(c)) {
        if (c == '#')
            while (c != '\n' && c != EOF) c = in.get();
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) throw IoError("netpbm: malformed header");
    int value = 0;
    while (std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = in.get();
    }
    return value;
}

} // namespace detail

inline void write_ppm(const std::string& path, const ImageU8& img) {
    if (img.channels != 3) throw IoError("write_ppm: expected 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_ppm: cannot open " + path);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()),
              static_cast<std::streamsize>(img.data.size()));
    if (!out) throw IoError("write_ppm: short write to " + path);
}

inline void write_pgm8(const std::string& path, const ImageU8& img) {
    if (img.channels != 1) throw IoError("write_pgm8: expected 1 channel");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pgm8: cannot open " + path);
    out << "P5\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()),
              static_cast<std::streamsize>(img.data.size()));
    if (!out) throw IoError("write_pgm8: short write to " + path);
}

inline void write_pgm16(const std::string& path, const ImageU16& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pgm16: cannot open " + path);
    out << "P5\n" << img.w << " " << img.h << "\n65535\n";
    std::vector<std::uint8_t> be(img.data.size() * 2);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        be[2 * i] = static_cast<std::uint8_t>(img.data[i] >> 8);
        be[2 * i + 1] = static_cast<std::uint8_t>(img.data[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(be.data()), static_cast<std::streamsize>(be.size()));
    if (!out) throw IoError("write_pgm16: short write to " + path);
}

inline ImageU8 read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_ppm: cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '6') throw IoError("read_ppm: not a P6 file: " + path);
    ImageU8 img;
    img.channels = 3;
    img.w = detail::pnm_read_int(in);
    img.h = detail::pnm_read_int(in);
    const int maxval = detail::pnm_read_int(in);
    if (maxval != 255) throw IoError("read_ppm: unsupported maxval " + std::to_string(maxval));
    img.data.resize(static_cast<std::size_t>(img.w) * img.h * 3);
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
    if (!in) throw IoError("read_ppm: truncated pixel data in " + path);
    return img;
}

// P5 with maxval <= 255
inline ImageU8 read_pgm8(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_pgm8: cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') throw IoError("read_pgm8: not a P5 file: " + path);
    ImageU8 img;
    img.w = detail::pnm_read_int(in);
    img.h = detail::pnm_read_int(in);
    const int maxval = detail::pnm_read_int(in);
    if (maxval > 255) throw IoError("read_pgm8: 16-bit file, use read_pgm16: " + path);
    img.data.resize(static_cast<std::size_t>(img.w) * img.h);
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
    if (!in) throw IoError("read_pgm8: truncated pixel data in " + path);
    return img;
}

// P5 with 16-bit big-endian samples
inline ImageU16 read_pgm16(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_pgm16: cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') throw IoError("read_pgm16: not a P5 file: " + path);
    ImageU16 img;
    img.w = detail::pnm_read_int(in);
    img.h = detail::pnm_read_int(in);
    const int maxval = detail::pnm_read_int(in);
    if (maxval <= 255) throw IoError("read_pgm16: 8-bit file, use read_pgm8: " + path);
    std::vector<std::uint8_t> be(static_cast<std::size_t>(img.w) * img.h * 2);
    in.read(reinterpret_cast<char*>(be.data()), static_cast<std::streamsize>(be.size()));
    if (!in) throw IoError("read_pgm16: truncated pixel data in " + path);
    img.data.resize(static_cast<std::size_t>(img.w) * img.h);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = static_cast<std::uint16_t>((be[2 * i] << 8) | be[2 * i + 1]);
    return img;
}

} // namespace t4t
