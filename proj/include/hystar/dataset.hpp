#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hystar/errors.hpp"
#include "hystar/rng.hpp"
#include "hystar/tensor.hpp"

namespace hystar {

struct DatasetConfig {
    std::size_t n_classes = 20;
    std::size_t samples_per_class_per_style = 20;
    std::size_t image_size = 32;
    std::vector<std::string> styles{"photo", "sketch", "lowres", "art"}; // [0] is the gallery style
    std::uint64_t seed = 0;
    std::vector<std::string> holdout_styles;

    void validate() const {
        if (n_classes < 2) throw ConfigError("data.n_classes", "must be >= 2");
        if (samples_per_class_per_style < 1) throw ConfigError("data.samples_per_class_per_style", "must be >= 1");
        if (image_size < 8 || image_size % 4 != 0) throw ConfigError("data.image_size", "must be a multiple of 4, >= 8");
        if (styles.size() < 2) throw ConfigError("data.styles", "need at least 2 styles");
        if (styles.front() != "photo") throw ConfigError("data.styles", "the first (gallery) style must be photo");
        for (std::size_t i = 0; i < styles.size(); ++i) {
            if (!known_style(styles[i])) throw ConfigError("data.styles", "unknown style '" + styles[i] + "'");
            if (std::count(styles.begin(), styles.end(), styles[i]) != 1)
                throw ConfigError("data.styles", "duplicate style '" + styles[i] + "'");
        }
        for (const auto& h : holdout_styles) {
            auto it = std::find(styles.begin(), styles.end(), h);
            if (it == styles.end()) throw ConfigError("data.holdout_styles", "'" + h + "' is not a listed style");
            if (it == styles.begin()) throw ConfigError("data.holdout_styles", "the gallery style cannot be held out");
        }
    }

    static bool known_style(const std::string& s) {
        return s == "photo" || s == "sketch" || s == "lowres" || s == "art";
    }
};

struct DataItem {
    std::string file;
    std::size_t class_id = 0;
    std::size_t style_id = 0;
    std::size_t instance_id = 0;
    std::vector<std::uint8_t> pixels; // row-major, image_size^2

    bool operator==(const DataItem&) const = default;
};

/// Items of every style; style 0 is the gallery. The counterpart of an item is
/// the gallery item with the same class_id and instance_id.
struct StyleDataset {
    std::size_t image_size = 0;
    std::vector<std::string> styles;
    std::vector<DataItem> items;

    bool operator==(const StyleDataset&) const = default;

    std::size_t style_index(const std::string& name) const {
        auto it = std::find(styles.begin(), styles.end(), name);
        if (it == styles.end()) throw ContractError("dataset has no style '" + name + "'");
        return static_cast<std::size_t>(it - styles.begin());
    }

    /// Index of the gallery counterpart of every item (gallery items map to themselves).
    std::vector<std::size_t> counterparts() const {
        std::map<std::pair<std::size_t, std::size_t>, std::size_t> gallery;
        for (std::size_t i = 0; i < items.size(); ++i)
            if (items[i].style_id == 0) gallery[{items[i].class_id, items[i].instance_id}] = i;
        std::vector<std::size_t> out(items.size());
        for (std::size_t i = 0; i < items.size(); ++i) {
            auto it = gallery.find({items[i].class_id, items[i].instance_id});
            if (it == gallery.end())
                throw FormatError("item " + items[i].file + " has no gallery counterpart");
            out[i] = it->second;
        }
        return out;
    }

    /// Pixels of the given items scaled to [0, 1], one row per item.
    template <typename T>
    Tensor<T> images(const std::vector<std::size_t>& idx) const {
        if (idx.empty()) throw ContractError("images: empty selection");
        const std::size_t P = image_size * image_size;
        Tensor<T> out({idx.size(), P});
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t p = 0; p < P; ++p) out(r, p) = static_cast<T>(items[idx[r]].pixels[p]) / T{255};
        return out;
    }
};

/// Evaluation split membership: one instance in five, the same for every class.
inline bool is_eval_instance(std::size_t instance_id) { return instance_id % 5 == 4; }

namespace detail {

struct Primitive {
    int kind = 0; // 0 ellipse, 1 regular polygon, 2 stroke
    double cx = 0, cy = 0, a = 0, b = 0, rot = 0;
    int sides = 3;

    bool inside(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(rot), s = std::sin(rot);
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        switch (kind) {
        case 0: return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
        case 1: {
            const double r = std::hypot(u, v);
            const double sector = 2.0 * std::numbers::pi / sides;
            double th = std::atan2(v, u);
            if (th < 0) th += 2.0 * std::numbers::pi;
            const double local = std::fmod(th, sector) - sector / 2.0;
            return r <= a * std::cos(sector / 2.0) / std::cos(local);
        }
        default: return std::abs(u) <= a && std::abs(v) <= b;
        }
    }
};

struct Glyph {
    std::vector<Primitive> parts;
    bool inside(double x, double y) const {
        for (const auto& p : parts)
            if (p.inside(x, y)) return true;
        return false;
    }
};

/// Class template: 2-3 primitives drawn from the class stream.
inline Glyph class_glyph(std::uint64_t seed, std::size_t cls) {
    Rng rng = make_rng(seed, "class", cls);
    Glyph g;
    const int n = 2 + static_cast<int>(rng() % 2);
    for (int i = 0; i < n; ++i) {
        Primitive p;
        p.kind = static_cast<int>(rng() % 3);
        p.cx = uniform(rng, -0.35, 0.35);
        p.cy = uniform(rng, -0.35, 0.35);
        p.rot = uniform(rng, 0.0, std::numbers::pi);
        p.sides = 3 + static_cast<int>(rng() % 4);
        if (p.kind == 2) {
            p.a = uniform(rng, 0.35, 0.6);
            p.b = uniform(rng, 0.06, 0.12);
        } else {
            p.a = uniform(rng, 0.2, 0.42);
            p.b = p.a * uniform(rng, 0.5, 1.0);
        }
        g.parts.push_back(p);
    }
    return g;
}

/// Per-instance jitter of a class template.
inline Glyph instance_glyph(const Glyph& base, std::uint64_t seed, std::size_t cls, std::size_t inst) {
    Rng rng = make_rng(seed, "instance", cls, inst);
    const double scale = uniform(rng, 0.85, 1.15);
    const double rot = uniform(rng, -0.25, 0.25);
    const double ox = uniform(rng, -0.1, 0.1), oy = uniform(rng, -0.1, 0.1);
    const double c = std::cos(rot), s = std::sin(rot);
    Glyph g = base;
    for (auto& p : g.parts) {
        const double x = p.cx * scale, y = p.cy * scale;
        p.cx = c * x - s * y + ox + uniform(rng, -0.04, 0.04);
        p.cy = s * x + c * y + oy + uniform(rng, -0.04, 0.04);
        p.a *= scale * uniform(rng, 0.92, 1.08);
        p.b *= scale * uniform(rng, 0.92, 1.08);
        p.rot += rot;
    }
    return g;
}

/// Coordinate warp applied before sampling the geometry.
struct Warp {
    double amp = 0, freq = 0, phase_x = 0, phase_y = 0;
    std::pair<double, double> apply(double x, double y) const {
        return {x + amp * std::sin(freq * y + phase_x), y + amp * std::sin(freq * x + phase_y)};
    }
};

/// Anti-aliased coverage of the glyph on an n x n grid over [-1, 1]^2.
inline std::vector<double> coverage(const Glyph& g, std::size_t n, const Warp& warp = {}, int ss = 4) {
    std::vector<double> cov(n * n, 0.0);
    const double step = 2.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            int hits = 0;
            for (int sy = 0; sy < ss; ++sy)
                for (int sx = 0; sx < ss; ++sx) {
                    const double x = -1.0 + step * (static_cast<double>(c) + (sx + 0.5) / ss);
                    const double y = -1.0 + step * (static_cast<double>(r) + (sy + 0.5) / ss);
                    auto [wx, wy] = warp.apply(x, y);
                    hits += g.inside(wx, wy);
                }
            cov[r * n + c] = static_cast<double>(hits) / (ss * ss);
        }
    return cov;
}

/// Fraction of each pixel lying within about one pixel of the glyph boundary.
inline std::vector<double> outline(const Glyph& g, std::size_t n) {
    constexpr int ss = 4;
    const std::size_t m = n * ss;
    std::vector<std::uint8_t> mask(m * m);
    const double step = 2.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < m; ++c)
            mask[r * m + c] = g.inside(-1.0 + step * (c + 0.5), -1.0 + step * (r + 0.5));
    std::vector<double> edge(n * n, 0.0);
    const auto M = static_cast<std::ptrdiff_t>(m);
    for (std::ptrdiff_t r = 0; r < M; ++r)
        for (std::ptrdiff_t c = 0; c < M; ++c) {
            const std::uint8_t v = mask[static_cast<std::size_t>(r * M + c)];
            bool boundary = false;
            for (std::ptrdiff_t dr = -2; dr <= 2 && !boundary; ++dr)
                for (std::ptrdiff_t dc = -2; dc <= 2 && !boundary; ++dc) {
                    const std::ptrdiff_t rr = r + dr, cc = c + dc;
                    if (rr < 0 || cc < 0 || rr >= M || cc >= M) continue;
                    boundary = mask[static_cast<std::size_t>(rr * M + cc)] != v;
                }
            if (boundary) edge[static_cast<std::size_t>(r / ss) * n + static_cast<std::size_t>(c / ss)] += 1.0 / (ss * ss);
        }
    return edge;
}

inline std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::vector<std::uint8_t> render(const Glyph& g, const std::string& style, std::size_t n, Rng& rng) {
    std::vector<std::uint8_t> px(n * n);
    const double bg = uniform(rng, 0.06, 0.2);
    const double fg = uniform(rng, 0.75, 0.95);
    const double gx = uniform(rng, -0.1, 0.1), gy = uniform(rng, -0.1, 0.1);
    auto coord = [n](std::size_t i) { return -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n); };
    if (style == "photo" || style == "lowres") {
        // lowres: the photo render at n/4, then nearest-neighbour upsampled
        const std::size_t m = style == "photo" ? n : n / 4, f = n / m;
        const auto cov = coverage(g, m);
        auto coord_m = [m](std::size_t i) { return -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(m); };
        std::vector<std::uint8_t> small(m * m);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < m; ++c) {
                const double shade = gx * coord_m(c) + gy * coord_m(r);
                small[r * m + c] = quantize(bg + (fg + shade - bg) * cov[r * m + c] + gaussian(rng, 0.02));
            }
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) px[r * n + c] = small[(r / f) * m + c / f];
    } else if (style == "sketch") {
        const auto edge = outline(g, n);
        const double ink = uniform(rng, 0.0, 0.15);
        for (std::size_t i = 0; i < n * n; ++i)
            px[i] = quantize(1.0 - (1.0 - ink) * std::min(1.0, 1.6 * edge[i]) + gaussian(rng, 0.01));
    } else { // art
        Warp w{uniform(rng, 0.06, 0.1), uniform(rng, 4.0, 7.0), uniform(rng, 0.0, 6.3), uniform(rng, 0.0, 6.3)};
        const auto cov = coverage(g, n, w);
        const double stripe_freq = uniform(rng, 8.0, 14.0), stripe_phase = uniform(rng, 0.0, 6.3);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) {
                const double v = 1.0 - (bg + (fg - bg) * cov[r * n + c]);
                const double band = std::floor(v * 4.0) / 3.0;
                const double stripe = std::sin(stripe_freq * (coord(r) + coord(c)) + stripe_phase) > 0 ? 1.0 : 0.7;
                px[r * n + c] = quantize(std::min(band, 1.0) * stripe);
            }
    }
    return px;
}

inline std::string item_file(const std::string& style, std::size_t cls, std::size_t inst) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "_c%03zu_i%03zu.pgm", cls, inst);
    return style + buf;
}

inline std::string pgm_bytes(const std::vector<std::uint8_t>& px, std::size_t n) {
    std::string out = "P5\n" + std::to_string(n) + " " + std::to_string(n) + "\n255\n";
    out.append(reinterpret_cast<const char*>(px.data()), px.size());
    return out;
}

inline std::uint32_t crc32_of(const std::string& bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

inline std::string hex8(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw FormatError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::vector<std::uint8_t> parse_pgm(const std::string& bytes, std::size_t& size, const std::string& name) {
    std::istringstream in(bytes);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    if (!(in >> magic >> w >> h >> maxval) || magic != "P5" || maxval != 255 || w == 0 || w != h)
        throw FormatError(name + ": not a square 8-bit P5 image");
    in.get();
    const auto offset = static_cast<std::size_t>(in.tellg());
    if (bytes.size() - offset != w * h) throw FormatError(name + ": pixel data length mismatch");
    size = w;
    return {bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end()};
}

inline std::size_t parse_index(const std::string& field, const std::string& what) {
    if (field.empty() || field.find_first_not_of("0123456789") != std::string::npos)
        throw FormatError("manifest: bad " + what + " '" + field + "'");
    return std::stoul(field);
}

} // namespace detail

/// Renders every (style, class, instance) item. Order: style, then class, then instance.
inline StyleDataset generate(const DatasetConfig& cfg) {
    cfg.validate();
    StyleDataset ds;
    ds.image_size = cfg.image_size;
    ds.styles = cfg.styles;
    for (std::size_t s = 0; s < cfg.styles.size(); ++s)
        for (std::size_t c = 0; c < cfg.n_classes; ++c) {
            const detail::Glyph base = detail::class_glyph(cfg.seed, c);
            for (std::size_t i = 0; i < cfg.samples_per_class_per_style; ++i) {
                const detail::Glyph g = detail::instance_glyph(base, cfg.seed, c, i);
                Rng rng = make_rng(cfg.seed, "render", s, c, i);
                ds.items.push_back({detail::item_file(cfg.styles[s], c, i), c, s, i,
                                    detail::render(g, cfg.styles[s], cfg.image_size, rng)});
            }
        }
    return ds;
}

inline constexpr const char* manifest_header = "file,class_id,style_id,instance_id,gallery_file,crc32";

/// Writes manifest.csv and one P5 image per item into `dir` (created if needed).
inline void write_dataset(const StyleDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto gallery = ds.counterparts();
    std::string manifest = std::string(manifest_header) + "\n";
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        const auto& it = ds.items[i];
        const std::string bytes = detail::pgm_bytes(it.pixels, ds.image_size);
        std::ofstream out(dir / it.file, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw FormatError("cannot write " + (dir / it.file).string());
        manifest += it.file + "," + std::to_string(it.class_id) + "," + std::to_string(it.style_id) + "," +
                    std::to_string(it.instance_id) + "," + ds.items[gallery[i]].file + "," +
                    detail::hex8(detail::crc32_of(bytes)) + "\n";
    }
    std::ofstream out(dir / "manifest.csv", std::ios::binary);
    out << manifest;
    if (!out) throw FormatError("cannot write manifest in " + dir.string());
}

/// Reads and verifies a dataset directory. Style names are taken from the
/// file-name prefixes, indexed by style_id.
inline StyleDataset read_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw FormatError("no dataset directory " + dir.string());
    std::istringstream manifest(detail::read_file(dir / "manifest.csv"));
    std::string line;
    if (!std::getline(manifest, line) || line != manifest_header)
        throw FormatError("manifest: missing or unexpected header");
    StyleDataset ds;
    std::vector<std::string> gallery_files;
    std::map<std::size_t, std::string> style_names;
    std::size_t row = 1;
    while (std::getline(manifest, line)) {
        ++row;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string field; std::getline(ss, field, ',');) f.push_back(field);
        if (f.size() != 6 || f[5].size() != 8) throw FormatError("manifest row " + std::to_string(row) + " malformed");
        DataItem item;
        item.file = f[0];
        item.class_id = detail::parse_index(f[1], "class_id");
        item.style_id = detail::parse_index(f[2], "style_id");
        item.instance_id = detail::parse_index(f[3], "instance_id");
        if (item.file != detail::item_file(item.file.substr(0, item.file.find('_')), item.class_id, item.instance_id))
            throw FormatError("manifest row " + std::to_string(row) + ": file name disagrees with ids");
        const std::string style = item.file.substr(0, item.file.find('_'));
        auto [pos, fresh] = style_names.emplace(item.style_id, style);
        if (!fresh && pos->second != style)
            throw FormatError("manifest row " + std::to_string(row) + ": style_id names two styles");
        const std::string bytes = detail::read_file(dir / item.file);
        if (detail::hex8(detail::crc32_of(bytes)) != f[5])
            throw FormatError("checksum mismatch for " + item.file);
        std::size_t size = 0;
        item.pixels = detail::parse_pgm(bytes, size, item.file);
        if (ds.image_size != 0 && size != ds.image_size) throw FormatError(item.file + ": image size differs");
        ds.image_size = size;
        gallery_files.push_back(f[4]);
        ds.items.push_back(std::move(item));
    }
    if (ds.items.empty()) throw FormatError("manifest lists no items");
    for (std::size_t s = 0; s < style_names.size(); ++s) {
        auto it = style_names.find(s);
        if (it == style_names.end()) throw FormatError("style ids are not contiguous");
        ds.styles.push_back(it->second);
    }
    const auto gallery = ds.counterparts();
    for (std::size_t i = 0; i < ds.items.size(); ++i)
        if (ds.items[gallery[i]].file != gallery_files[i])
            throw FormatError("manifest: wrong gallery_file for " + ds.items[i].file);
    return ds;
}

/// CRC-32 over manifest.csv and every listed file, in manifest order.
inline std::uint32_t directory_checksum(const std::filesystem::path& dir) {
    const std::string manifest = detail::read_file(dir / "manifest.csv");
    uLong crc = ::crc32(0L, reinterpret_cast<const Bytef*>(manifest.data()), static_cast<uInt>(manifest.size()));
    for (const auto& item : read_dataset(dir).items) {
        const std::string bytes = detail::read_file(dir / item.file);
        crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    }
    return static_cast<std::uint32_t>(crc);
}

} // namespace hystar
