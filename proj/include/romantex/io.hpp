#pragma once

// File formats.
//
// Tensor archive (".rtx"), little-endian:
//   magic "RTXA" | u32 version (=1)
//   u32 n_meta   | n_meta × (str key, str value)
//   u32 n_tensor | n_tensor × (str name, u32 rank, rank × u64 extent, f32 data[prod(extent)])
// where str = u32 byte length followed by the bytes. Entries keep insertion
// order, so equal archives serialize to equal bytes.
//
// PNG images are 8-bit (or 16-bit for integer debug images) with optional
// tEXt entries carrying metadata such as the producing config hash.

#include "romantex/numerics.hpp"

#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace romantex {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TensorArchive {
    static constexpr char kMagic[4] = {'R', 'T', 'X', 'A'};
    static constexpr std::uint32_t kVersion = 1;

    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, Grid>> tensors;

    void set_meta(const std::string& key, const std::string& value) {
        for (auto& [k, v] : meta) {
            if (k == key) {
                v = value;
                return;
            }
        }
        meta.emplace_back(key, value);
    }

    std::string get_meta(const std::string& key, const std::string& fallback = "") const {
        for (const auto& [k, v] : meta)
            if (k == key) return v;
        return fallback;
    }

    bool has(const std::string& name) const {
        for (const auto& [n, g] : tensors)
            if (n == name) return true;
        return false;
    }

    void add(const std::string& name, Grid g) { tensors.emplace_back(name, std::move(g)); }

    const Grid& get(const std::string& name) const {
        for (const auto& [n, g] : tensors)
            if (n == name) return g;
        throw IoError("archive has no tensor named '" + name + "'");
    }
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_str(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated archive");
    return v;
}
inline std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 8)) throw IoError("truncated archive");
    return v;
}
inline std::string get_str(std::istream& in) {
    const auto n = get_u32(in);
    if (n > (1u << 20)) throw IoError("corrupt archive string length");
    std::string s(n, '\0');
    if (n && !in.read(s.data(), n)) throw IoError("truncated archive");
    return s;
}

} // namespace detail

inline void write_archive(std::ostream& out, const TensorArchive& ar) {
    out.write(TensorArchive::kMagic, 4);
    detail::put_u32(out, TensorArchive::kVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(ar.meta.size()));
    for (const auto& [k, v] : ar.meta) {
        detail::put_str(out, k);
        detail::put_str(out, v);
    }
    detail::put_u32(out, static_cast<std::uint32_t>(ar.tensors.size()));
    for (const auto& [name, g] : ar.tensors) {
        detail::put_str(out, name);
        detail::put_u32(out, static_cast<std::uint32_t>(g.rank()));
        for (auto e : g.shape()) detail::put_u64(out, e);
        out.write(reinterpret_cast<const char*>(g.data()), static_cast<std::streamsize>(g.size() * sizeof(float)));
    }
}

inline TensorArchive read_archive(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, TensorArchive::kMagic, 4) != 0) {
        throw IoError("not a tensor archive (bad magic)");
    }
    const auto version = detail::get_u32(in);
    if (version != TensorArchive::kVersion) throw IoError("unsupported archive version " + std::to_string(version));
    TensorArchive ar;
    const auto n_meta = detail::get_u32(in);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto k = detail::get_str(in);
        auto v = detail::get_str(in);
        ar.meta.emplace_back(std::move(k), std::move(v));
    }
    const auto n = detail::get_u32(in);
    for (std::uint32_t i = 0; i < n; ++i) {
        auto name = detail::get_str(in);
        const auto rank = detail::get_u32(in);
        if (rank > 8) throw IoError("corrupt archive rank");
        Shape shape(rank);
        for (auto& e : shape) e = detail::get_u64(in);
        Grid g(shape);
        if (!in.read(reinterpret_cast<char*>(g.data()), static_cast<std::streamsize>(g.size() * sizeof(float)))) {
            throw IoError("truncated archive tensor '" + name + "'");
        }
        ar.tensors.emplace_back(std::move(name), std::move(g));
    }
    return ar;
}

inline void save_archive(const std::string& path, const TensorArchive& ar) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_archive(out, ar);
    if (!out) throw IoError("write failed: " + path);
}

inline TensorArchive load_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    return read_archive(in);
}

// ---------------------------------------------------------------------------
// PNG

using PngText = std::vector<std::pair<std::string, std::string>>;

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

[[noreturn]] inline void png_fail(png_structp, png_const_charp msg) { throw IoError(std::string("libpng: ") + msg); }
inline void png_warn(png_structp, png_const_charp) {}

inline void write_png_rows(const std::string& path, std::size_t h, std::size_t w, int channels, int bit_depth,
                           const std::vector<std::vector<png_byte>>& rows, const PngText& text) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};
    png_init_io(png, fp.get());
    const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY
                      : channels == 2 ? PNG_COLOR_TYPE_GRAY_ALPHA
                      : channels == 3 ? PNG_COLOR_TYPE_RGB
                                      : PNG_COLOR_TYPE_RGB_ALPHA;
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_text> texts(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        texts[i] = png_text{};
        texts[i].compression = PNG_TEXT_COMPRESSION_NONE;
        texts[i].key = const_cast<char*>(text[i].first.c_str());
        texts[i].text = const_cast<char*>(text[i].second.c_str());
        texts[i].text_length = text[i].second.size();
    }
    if (!texts.empty()) png_set_text(png, info, texts.data(), static_cast<int>(texts.size()));
    png_write_info(png, info);
    for (const auto& r : rows) png_write_row(png, r.data());
    png_write_end(png, nullptr);
}

} // namespace detail

/// Writes an H×W×C grid (C ∈ {1,2,3,4}) with values in [0,1] as an 8-bit PNG.
inline void write_png(const std::string& path, const Grid& img, const PngText& text = {}) {
    if (img.rank() != 3 || img.extent(2) < 1 || img.extent(2) > 4) throw ShapeError("write_png: expected H×W×{1..4}");
    const std::size_t h = img.extent(0), w = img.extent(1), c = img.extent(2);
    std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(w * c));
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w * c; ++j) {
            const float v = std::clamp(img[i * w * c + j], 0.0f, 1.0f);
            rows[i][j] = static_cast<png_byte>(std::lround(v * 255.0f));
        }
    detail::write_png_rows(path, h, w, static_cast<int>(c), 8, rows, text);
}

/// Writes unsigned 16-bit samples (H×W×C, values clamped to [0, 65535]).
inline void write_png16(const std::string& path, std::size_t h, std::size_t w, int channels,
                        const std::vector<std::uint16_t>& samples, const PngText& text = {}) {
    if (samples.size() != h * w * static_cast<std::size_t>(channels)) throw ShapeError("write_png16: size mismatch");
    std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(w * channels * 2));
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w * channels; ++j) {
            const auto v = samples[i * w * channels + j];
            rows[i][2 * j] = static_cast<png_byte>(v >> 8); // PNG is big-endian
            rows[i][2 * j + 1] = static_cast<png_byte>(v & 0xFF);
        }
    detail::write_png_rows(path, h, w, channels, 16, rows, text);
}

struct PngImage {
    Grid pixels; // H×W×C in [0,1]
    PngText text;
};

inline PngImage read_png(const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot read " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_fail, detail::png_warn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_read_struct(p, i, nullptr); }
    } guard{&png, &info};
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_packing(png);
    png_read_update_info(png, info);
    const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    const std::size_t c = png_get_channels(png, info);
    std::vector<png_byte> buf(h * w * c);
    std::vector<png_bytep> rows(h);
    for (std::size_t i = 0; i < h; ++i) rows[i] = buf.data() + i * w * c;
    png_read_image(png, rows.data());
    png_read_end(png, info);
    PngImage out;
    out.pixels = Grid({h, w, c});
    for (std::size_t i = 0; i < buf.size(); ++i) out.pixels[i] = static_cast<float>(buf[i]) / 255.0f;
    png_textp texts = nullptr;
    int n_text = 0;
    png_get_text(png, info, &texts, &n_text);
    for (int i = 0; i < n_text; ++i) out.text.emplace_back(texts[i].key, std::string(texts[i].text, texts[i].text_length));
    return out;
}

/// Drops or appends channels so the image has exactly `channels` channels.
inline Grid to_channels(const Grid& img, std::size_t channels) {
    const std::size_t h = img.extent(0), w = img.extent(1), c = img.extent(2);
    if (c == channels) return img;
    Grid out({h, w, channels});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
            for (std::size_t k = 0; k < channels; ++k) out(i, j, k) = img(i, j, c == 1 ? 0 : std::min(k, c - 1));
    return out;
}

// ---------------------------------------------------------------------------
// Checksums and hashes (FNV-1a, 64-bit).

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : bytes) h = (h ^ c) * 1099511628211ULL;
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace romantex
