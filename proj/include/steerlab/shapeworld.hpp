#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "steerlab/error.hpp"
#include "steerlab/rng.hpp"
#include "steerlab/tensor.hpp"

namespace steerlab {

// Procedural shape x texture world: 3x32x32 images on a fixed gray
// background, shape and texture sampled independently so the two axes are
// statistically decoupled. Rendering is a pure function of
// (ShapeClass, TextureClass, seed).

constexpr int kImageSize = 32;
constexpr double kBackgroundGray = 0.5;

enum class Shape { circle, square, triangle, cross, ring, diamond };
enum class TextureKind { solid, stripes, checker, noise, gradient };

constexpr std::array<Shape, 6> kAllShapes = {Shape::circle, Shape::square, Shape::triangle,
                                             Shape::cross,  Shape::ring,   Shape::diamond};
constexpr std::array<TextureKind, 5> kAllTextures = {TextureKind::solid, TextureKind::stripes,
                                                     TextureKind::checker, TextureKind::noise,
                                                     TextureKind::gradient};

inline const char* shape_name(Shape s) {
    switch (s) {
        case Shape::circle: return "circle";
        case Shape::square: return "square";
        case Shape::triangle: return "triangle";
        case Shape::cross: return "cross";
        case Shape::ring: return "ring";
        case Shape::diamond: return "diamond";
    }
    return "?";
}

inline const char* texture_name(TextureKind t) {
    switch (t) {
        case TextureKind::solid: return "solid";
        case TextureKind::stripes: return "stripes";
        case TextureKind::checker: return "checker";
        case TextureKind::noise: return "noise";
        case TextureKind::gradient: return "gradient";
    }
    return "?";
}

inline Shape shape_from_name(const std::string& n) {
    for (Shape s : kAllShapes)
        if (n == shape_name(s)) return s;
    raise(Err::ConfigInvalid, "unknown shape: " + n);
}

inline TextureKind texture_from_name(const std::string& n) {
    for (TextureKind t : kAllTextures)
        if (n == texture_name(t)) return t;
    raise(Err::ConfigInvalid, "unknown texture: " + n);
}

struct ShapeClass {
    Shape tag = Shape::circle;
    double size = 0.4;       // characteristic radius / half-extent, fraction of image width
    double offset_x = 0.0;   // center offset, pixels
    double offset_y = 0.0;
};

struct TextureClass {
    TextureKind tag = TextureKind::solid;
    // Base color, sampled within [0.62, 0.92]: textures are consistently
    // brighter than the 0.5 background so shape masks carry a stable
    // luminance contrast regardless of texture class or color draw.
    double r = 0.75, g = 0.75, b = 0.75;
    double frequency = 3.0;  // cycles per image
};

struct ShapeTextureImage {
    Tensor pixels;  // [3, 32, 32], values in [0, 1]
    Shape shape_label;
    TextureKind texture_label;
    uint64_t seed = 0;
};

namespace detail {

// analytic inside-test at continuous image coordinates
inline bool shape_mask(const ShapeClass& sc, double x, double y) {
    const double w = kImageSize;
    const double cx = w / 2.0 + sc.offset_x;
    const double cy = w / 2.0 + sc.offset_y;
    const double rr = sc.size * w;  // characteristic radius
    const double dx = x - cx, dy = y - cy;
    switch (sc.tag) {
        case Shape::circle:
            return dx * dx + dy * dy <= rr * rr;
        case Shape::square:
            // side = size * w
            return std::abs(dx) <= rr / 2.0 && std::abs(dy) <= rr / 2.0;
        case Shape::triangle: {
            // upward isoceles: height = base = size * w
            const double top = cy - rr / 2.0;
            if (y < top || y > cy + rr / 2.0) return false;
            return std::abs(dx) <= (y - top) / 2.0;
        }
        case Shape::cross: {
            const double arm = rr / 2.0, thick = rr / 6.0;
            return (std::abs(dx) <= arm && std::abs(dy) <= thick) ||
                   (std::abs(dy) <= arm && std::abs(dx) <= thick);
        }
        case Shape::ring: {
            const double d2 = dx * dx + dy * dy;
            const double inner = 0.55 * rr;
            return d2 <= rr * rr && d2 >= inner * inner;
        }
        case Shape::diamond:
            return std::abs(dx) + std::abs(dy) <= rr;
    }
    return false;
}

inline double texture_value(const TextureClass& tc, uint64_t seed, int x, int y, int channel) {
    const double base = channel == 0 ? tc.r : channel == 1 ? tc.g : tc.b;
    const double w = kImageSize;
    switch (tc.tag) {
        case TextureKind::solid:
            return base;
        case TextureKind::stripes: {
            // grid-anchored diagonal bands; discrete cell size keeps the
            // pattern template-detectable
            const int cell = 2 + static_cast<int>(hash_combine(seed, 103) % 2);  // 2..3 px
            const int band = static_cast<int>(std::floor((x + y) * 0.5 / cell));
            return ((band % 2) + 2) % 2 == 0 ? base : 0.55 * base;
        }
        case TextureKind::checker: {
            const int cell = 2 + static_cast<int>(hash_combine(seed, 105) % 3);  // 2..4 px
            const int ix = static_cast<int>(std::floor(x / cell));
            const int iy = static_cast<int>(std::floor(y / cell));
            return (ix + iy) % 2 == 0 ? base : 0.55 * base;
        }
        case TextureKind::noise: {
            // deep per-pixel bimodal speckle
            uint64_t h = hash_combine(hash_combine(seed, static_cast<uint64_t>(x)),
                                      static_cast<uint64_t>(y));
            return (h & 1 ? 1.0 : 0.45) * base;
        }
        case TextureKind::gradient: {
            // fixed left-to-right ramp
            const double t = x / (w - 1);
            return (0.55 + 0.45 * t) * base;
        }
    }
    return base;
}

}  // namespace detail

// Renders one image. Mask edges are antialiased by 2x2 supersampling of the
// analytic inside-test. Throws DegenerateShape when the covered area lies
// outside [5%, 80%] of the frame; callers resample the shape parameters.
inline ShapeTextureImage render_image(const ShapeClass& shape, const TextureClass& texture,
                                      uint64_t seed) {
    ShapeTextureImage img;
    img.pixels = Tensor({3, kImageSize, kImageSize});
    img.shape_label = shape.tag;
    img.texture_label = texture.tag;
    img.seed = seed;

    double covered = 0.0;
    for (int y = 0; y < kImageSize; ++y) {
        for (int x = 0; x < kImageSize; ++x) {
            int hits = 0;
            for (double sy : {0.25, 0.75})
                for (double sx : {0.25, 0.75})
                    if (detail::shape_mask(shape, x + sx, y + sy)) ++hits;
            const double cov = hits / 4.0;
            covered += cov;
            for (int c = 0; c < 3; ++c) {
                const double tex =
                    cov > 0.0 ? detail::texture_value(texture, seed, x, y, c) : kBackgroundGray;
                img.pixels.data[(static_cast<size_t>(c) * kImageSize + y) * kImageSize + x] =
                    cov * tex + (1.0 - cov) * kBackgroundGray;
            }
        }
    }
    const double frac = covered / (kImageSize * kImageSize);
    require(frac >= 0.05 && frac <= 0.80, Err::DegenerateShape,
            "mask area fraction " + std::to_string(frac) + " outside [0.05, 0.80]");
    return img;
}

// supersampled mask coverage of the frame for a shape, no texture involved
inline double mask_area_fraction(const ShapeClass& sc) {
    double covered = 0.0;
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x)
            for (double sy : {0.25, 0.75})
                for (double sx : {0.25, 0.75})
                    if (detail::shape_mask(sc, x + sx, y + sy)) covered += 0.25;
    return covered / (kImageSize * kImageSize);
}

// ---------------------------------------------------------------------------
// PPM (P6) export / import
// ---------------------------------------------------------------------------

inline std::string to_ppm(const Tensor& pixels) {
    require(pixels.rank() == 3 && pixels.shape[0] == 3, Err::ShapeMismatch,
            "ppm export expects [3,H,W]");
    const int h = pixels.shape[1], w = pixels.shape[2];
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = pixels.data[(static_cast<size_t>(c) * h + y) * w + x];
                v = std::clamp(v, 0.0, 1.0);
                out += static_cast<char>(std::lround(v * 255.0));
            }
    return out;
}

inline void save_ppm(const Tensor& pixels, const std::filesystem::path& path) {
    write_file_atomic(path, to_ppm(pixels));
}

inline Tensor load_ppm(const std::filesystem::path& path) {
    std::string buf = read_file(path);
    std::istringstream in(buf);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    require(magic == "P6" && w > 0 && h > 0 && maxval == 255, Err::MissingImage,
            "unsupported ppm: " + path.string());
    in.get();  // single whitespace after maxval
    const size_t need = static_cast<size_t>(w) * h * 3;
    const size_t off = static_cast<size_t>(in.tellg());
    require(buf.size() >= off + need, Err::MissingImage, "truncated ppm: " + path.string());
    Tensor t({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                t.data[(static_cast<size_t>(c) * h + y) * w + x] =
                    static_cast<unsigned char>(buf[off + (static_cast<size_t>(y) * w + x) * 3 + c]) /
                    255.0;
    return t;
}

// bilinear resize of a [3,H,W] image to [3,out,out]
inline Tensor resize_bilinear(const Tensor& img, int out_size) {
    require(img.rank() == 3 && img.shape[0] == 3, Err::ShapeMismatch, "resize expects [3,H,W]");
    const int h = img.shape[1], w = img.shape[2];
    if (h == out_size && w == out_size) return img;
    Tensor out({3, out_size, out_size});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < out_size; ++y)
            for (int x = 0; x < out_size; ++x) {
                const double sy = (y + 0.5) * h / out_size - 0.5;
                const double sx = (x + 0.5) * w / out_size - 0.5;
                const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, h - 1);
                const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, w - 1);
                const int y1 = std::min(y0 + 1, h - 1);
                const int x1 = std::min(x0 + 1, w - 1);
                const double fy = std::clamp(sy - y0, 0.0, 1.0);
                const double fx = std::clamp(sx - x0, 0.0, 1.0);
                auto px = [&](int yy, int xx) {
                    return img.data[(static_cast<size_t>(c) * h + yy) * w + xx];
                };
                out.data[(static_cast<size_t>(c) * out_size + y) * out_size + x] =
                    (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) +
                    fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
            }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

struct Triplet {
    int anchor = -1;
    int positive = -1;
    int negative = -1;
};

struct ImageRecord {
    int id = -1;
    Shape shape;
    TextureKind texture;
    uint64_t seed = 0;
    std::string file;  // relative to the manifest directory
};

enum class Split { train, val };

struct DatasetManifest {
    std::vector<ImageRecord> images;
    std::vector<int> train_ids;
    std::vector<int> val_ids;
    std::vector<Triplet> train_triplets;
    std::vector<Triplet> val_triplets;
    uint64_t seed = 0;
    std::string config_hash;
    std::filesystem::path root;  // directory the manifest was loaded from / built into

    const std::vector<int>& ids(Split s) const { return s == Split::train ? train_ids : val_ids; }
    const std::vector<Triplet>& triplets(Split s) const {
        return s == Split::train ? train_triplets : val_triplets;
    }
};

struct DatasetConfig {
    int n_images = 600;
    std::vector<Shape> shapes{kAllShapes.begin(), kAllShapes.end()};
    std::vector<TextureKind> textures{kAllTextures.begin(), kAllTextures.end()};
    uint64_t seed = 1;
    double val_fraction = 0.2;
    int train_triplet_count = 2000;
    int val_triplet_count = 500;
    bool export_ppm = false;
    // Nuisance sampling ranges (size within the ShapeClass range [0.3, 0.8]).
    // Defaults keep the world easy enough for a pixel MLP to reach
    // near-ceiling triplet accuracy while leaving real intra-class variety.
    double size_lo = 0.38;
    double size_hi = 0.55;
    double max_offset = 2.0;  // pixels, per axis
};

inline void validate(const DatasetConfig& cfg) {
    const size_t cells = cfg.shapes.size() * cfg.textures.size();
    require(!cfg.shapes.empty() && !cfg.textures.empty(), Err::ConfigInvalid,
            "need at least one shape and one texture");
    require(cfg.n_images >= static_cast<int>(2 * cells), Err::ConfigInvalid,
            "n_images must be >= 2 * shapes * textures");
    require(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0, Err::ConfigInvalid,
            "val_fraction must lie in [0, 1)");
    require(cfg.train_triplet_count >= 0 && cfg.val_triplet_count >= 0, Err::ConfigInvalid,
            "triplet counts must be nonnegative");
}

// samples shape parameters until the rendered mask area lands in range
inline ShapeTextureImage render_sampled(Shape shape, TextureKind texture, uint64_t image_seed,
                                        Rng& rng, double size_lo = 0.3, double size_hi = 0.8,
                                        double max_offset = 3.2) {
    require(size_lo >= 0.3 && size_hi <= 0.8 && size_lo <= size_hi, Err::ConfigInvalid,
            "size range must lie within [0.3, 0.8]");
    TextureClass tc;
    tc.tag = texture;
    tc.r = rng.uniform(0.7, 0.95);
    tc.g = rng.uniform(0.7, 0.95);
    tc.b = rng.uniform(0.7, 0.95);
    tc.frequency = rng.uniform(4.0, 8.0);
    for (int attempt = 0; attempt < 100; ++attempt) {
        ShapeClass sc;
        sc.tag = shape;
        sc.size = rng.uniform(size_lo, size_hi);
        sc.offset_x = rng.uniform(-max_offset, max_offset);
        sc.offset_y = rng.uniform(-max_offset, max_offset);
        try {
            return render_image(sc, tc, image_seed);
        } catch (const Error& e) {
            if (e.code() != Err::DegenerateShape) throw;
        }
    }
    raise(Err::DegenerateShape, "could not sample a non-degenerate " +
                                    std::string(shape_name(shape)) + " in 100 attempts");
}

namespace detail {

struct SplitIndex {
    // shape -> texture -> image ids, plus flat id list
    std::map<Shape, std::map<TextureKind, std::vector<int>>> by_shape;
    std::vector<int> all;
};

inline SplitIndex index_split(const DatasetManifest& m, Split s) {
    SplitIndex idx;
    for (int id : m.ids(s)) {
        const ImageRecord& rec = m.images[static_cast<size_t>(id)];
        idx.by_shape[rec.shape][rec.texture].push_back(id);
        idx.all.push_back(id);
    }
    return idx;
}

inline void check_variety(const SplitIndex& idx) {
    require(idx.by_shape.size() >= 2, Err::InsufficientVariety,
            "triplet sampling needs at least two shape classes in the split");
    for (const auto& [shape, textures] : idx.by_shape)
        require(textures.size() >= 2, Err::InsufficientVariety,
                std::string("shape ") + shape_name(shape) +
                    " has fewer than two textures in the split");
}

}  // namespace detail

// Uniform draw of a valid triplet: anchor uniform over the split, positive
// uniform over same-shape/different-texture images, negative uniform over
// different-shape images.
inline Triplet sample_triplet(Rng& rng, const DatasetManifest& manifest, Split split) {
    const auto idx = detail::index_split(manifest, split);
    detail::check_variety(idx);
    const int anchor = idx.all[rng.uniform_int(idx.all.size())];
    const ImageRecord& a = manifest.images[static_cast<size_t>(anchor)];

    std::vector<int> positives;
    for (const auto& [tex, ids] : idx.by_shape.at(a.shape))
        if (tex != a.texture) positives.insert(positives.end(), ids.begin(), ids.end());
    std::vector<int> negatives;
    for (const auto& [shape, textures] : idx.by_shape)
        if (shape != a.shape)
            for (const auto& [tex, ids] : textures)
                negatives.insert(negatives.end(), ids.begin(), ids.end());
    require(!positives.empty() && !negatives.empty(), Err::InsufficientVariety,
            "no valid positive/negative for sampled anchor");

    Triplet t;
    t.anchor = anchor;
    t.positive = positives[rng.uniform_int(positives.size())];
    t.negative = negatives[rng.uniform_int(negatives.size())];
    return t;
}

// faster bulk variant: index the split once
inline std::vector<Triplet> sample_triplets(Rng& rng, const DatasetManifest& manifest, Split split,
                                            int count) {
    const auto idx = detail::index_split(manifest, split);
    detail::check_variety(idx);
    std::vector<Triplet> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int anchor = idx.all[rng.uniform_int(idx.all.size())];
        const ImageRecord& a = manifest.images[static_cast<size_t>(anchor)];
        std::vector<int> positives, negatives;
        for (const auto& [tex, ids] : idx.by_shape.at(a.shape))
            if (tex != a.texture) positives.insert(positives.end(), ids.begin(), ids.end());
        for (const auto& [shape, textures] : idx.by_shape)
            if (shape != a.shape)
                for (const auto& [tex, ids] : textures)
                    negatives.insert(negatives.end(), ids.begin(), ids.end());
        Triplet t;
        t.anchor = anchor;
        t.positive = positives[rng.uniform_int(positives.size())];
        t.negative = negatives[rng.uniform_int(negatives.size())];
        out.push_back(t);
    }
    return out;
}

inline std::string image_file_name(int id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "images/img_%05d.stlb", id);
    return buf;
}

// Builds the dataset on disk: stratified round-robin over (shape, texture)
// cells, per-image seed = hash(global seed, id) so generation order never
// matters. Returns the manifest; images are saved under root/images/.
inline DatasetManifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& root,
                                     std::vector<Tensor>* pixels_out = nullptr) {
    validate(cfg);
    namespace fs = std::filesystem;
    fs::create_directories(root / "images");

    DatasetManifest m;
    m.seed = cfg.seed;
    m.root = root;

    const int n_tex = static_cast<int>(cfg.textures.size());
    const int cells = static_cast<int>(cfg.shapes.size()) * n_tex;

    std::map<int, std::vector<int>> cell_members;
    for (int id = 0; id < cfg.n_images; ++id) {
        const int cell = id % cells;
        const Shape shape = cfg.shapes[static_cast<size_t>(cell / n_tex)];
        const TextureKind tex = cfg.textures[static_cast<size_t>(cell % n_tex)];
        const uint64_t image_seed = hash_combine(cfg.seed, static_cast<uint64_t>(id));
        Rng rng(image_seed);
        ShapeTextureImage img = render_sampled(shape, tex, image_seed, rng, cfg.size_lo,
                                               cfg.size_hi, cfg.max_offset);

        ImageRecord rec;
        rec.id = id;
        rec.shape = shape;
        rec.texture = tex;
        rec.seed = image_seed;
        rec.file = image_file_name(id);
        save_tensor(img.pixels, root / rec.file);
        if (cfg.export_ppm) {
            fs::path ppm = root / rec.file;
            ppm.replace_extension(".ppm");
            save_ppm(img.pixels, ppm);
        }
        if (pixels_out) pixels_out->push_back(img.pixels);
        m.images.push_back(std::move(rec));
        cell_members[cell].push_back(id);
    }

    // split within each cell: leading ids -> train, trailing -> val
    for (auto& [cell, ids] : cell_members) {
        const auto k = static_cast<size_t>(
            std::ceil((1.0 - cfg.val_fraction) * static_cast<double>(ids.size())));
        for (size_t i = 0; i < ids.size(); ++i)
            (i < k ? m.train_ids : m.val_ids).push_back(ids[i]);
    }
    std::sort(m.train_ids.begin(), m.train_ids.end());
    std::sort(m.val_ids.begin(), m.val_ids.end());

    Rng train_rng(hash_combine(cfg.seed, 0x7472));  // "tr"
    Rng val_rng(hash_combine(cfg.seed, 0x7661));    // "va"
    if (cfg.train_triplet_count > 0)
        m.train_triplets = sample_triplets(train_rng, m, Split::train, cfg.train_triplet_count);
    if (cfg.val_triplet_count > 0 && !m.val_ids.empty())
        m.val_triplets = sample_triplets(val_rng, m, Split::val, cfg.val_triplet_count);
    return m;
}

// ---------------------------------------------------------------------------
// Manifest JSON
// ---------------------------------------------------------------------------

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["seed"] = m.seed;
    j["config_hash"] = m.config_hash;
    auto imgs = nlohmann::json::array();
    for (const auto& r : m.images)
        imgs.push_back({{"id", r.id},
                        {"shape", shape_name(r.shape)},
                        {"texture", texture_name(r.texture)},
                        {"seed", r.seed},
                        {"file", r.file}});
    j["images"] = std::move(imgs);
    j["train_ids"] = m.train_ids;
    j["val_ids"] = m.val_ids;
    auto dump_triplets = [](const std::vector<Triplet>& ts) {
        auto arr = nlohmann::json::array();
        for (const auto& t : ts) arr.push_back({t.anchor, t.positive, t.negative});
        return arr;
    };
    j["train_triplets"] = dump_triplets(m.train_triplets);
    j["val_triplets"] = dump_triplets(m.val_triplets);
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j,
                                          const std::filesystem::path& root) {
    DatasetManifest m;
    m.root = root;
    m.seed = j.at("seed").get<uint64_t>();
    m.config_hash = j.value("config_hash", "");
    for (const auto& r : j.at("images")) {
        ImageRecord rec;
        rec.id = r.at("id").get<int>();
        rec.shape = shape_from_name(r.at("shape").get<std::string>());
        rec.texture = texture_from_name(r.at("texture").get<std::string>());
        rec.seed = r.at("seed").get<uint64_t>();
        rec.file = r.at("file").get<std::string>();
        m.images.push_back(std::move(rec));
    }
    m.train_ids = j.at("train_ids").get<std::vector<int>>();
    m.val_ids = j.at("val_ids").get<std::vector<int>>();
    auto read_triplets = [](const nlohmann::json& arr) {
        std::vector<Triplet> ts;
        for (const auto& t : arr) ts.push_back({t.at(0).get<int>(), t.at(1).get<int>(),
                                                t.at(2).get<int>()});
        return ts;
    };
    m.train_triplets = read_triplets(j.at("train_triplets"));
    m.val_triplets = read_triplets(j.at("val_triplets"));
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& root) {
    write_file_atomic(root / "manifest.json", manifest_to_json(m).dump(2) + "\n");
}

inline DatasetManifest load_manifest(const std::filesystem::path& root) {
    const auto path = root / "manifest.json";
    require(std::filesystem::exists(path), Err::MissingArtifact,
            "manifest not found: " + path.string());
    return manifest_from_json(nlohmann::json::parse(read_file(path)), root);
}

// loads every image tensor, indexed by image id
inline std::vector<Tensor> load_dataset_images(const DatasetManifest& m) {
    std::vector<Tensor> out(m.images.size());
    for (const auto& rec : m.images) {
        Tensor t = load_tensor(m.root / rec.file);
        require(t.rank() == 3 && t.shape[0] == 3 && t.shape[1] == kImageSize &&
                    t.shape[2] == kImageSize,
                Err::ShapeMismatch, "dataset image has wrong shape: " + rec.file);
        out[static_cast<size_t>(rec.id)] = std::move(t);
    }
    return out;
}

// ---------------------------------------------------------------------------
// External triplet CSV: header `anchor,positive,negative`, one row of image
// paths per triplet. Supports .stlb tensors and binary .ppm; anything else
// is rejected. Images are cached and bilinearly resized to 3x32x32.
// ---------------------------------------------------------------------------

struct ExternalTriplets {
    std::vector<Tensor> images;    // unique images, resized
    std::vector<Triplet> triplets; // indices into `images`
};

namespace detail {

inline Tensor load_external_image(const std::filesystem::path& path) {
    require(std::filesystem::exists(path), Err::MissingImage, "no such image: " + path.string());
    Tensor t;
    const std::string ext = path.extension().string();
    if (ext == ".stlb") {
        t = load_tensor(path);
        require(t.rank() == 3 && t.shape[0] == 3, Err::MissingImage,
                "tensor image must be [3,H,W]: " + path.string());
    } else if (ext == ".ppm") {
        t = load_ppm(path);
    } else {
        raise(Err::MissingImage, "unsupported image format: " + path.string());
    }
    return resize_bilinear(t, kImageSize);
}

inline std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

}  // namespace detail

inline ExternalTriplets load_external_triplets(const std::filesystem::path& csv_path) {
    require(std::filesystem::exists(csv_path), Err::MissingArtifact,
            "triplet csv not found: " + csv_path.string());
    std::ifstream in(csv_path);
    require(in.good(), Err::IoError, "cannot open " + csv_path.string());

    const auto base = csv_path.has_parent_path() ? csv_path.parent_path()
                                                 : std::filesystem::path(".");
    ExternalTriplets out;
    std::map<std::string, int> cache;
    auto image_index = [&](const std::string& cell) {
        auto it = cache.find(cell);
        if (it != cache.end()) return it->second;
        std::filesystem::path p(cell);
        if (p.is_relative()) p = base / p;
        out.images.push_back(detail::load_external_image(p));
        const int idx = static_cast<int>(out.images.size()) - 1;
        cache.emplace(cell, idx);
        return idx;
    };

    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        auto cells = detail::split_csv_row(line);
        if (!header_seen) {
            require(cells.size() == 3 && cells[0] == "anchor" && cells[1] == "positive" &&
                        cells[2] == "negative",
                    Err::MalformedRow,
                    "line " + std::to_string(line_no) + ": expected header anchor,positive,negative");
            header_seen = true;
            continue;
        }
        require(cells.size() == 3, Err::MalformedRow,
                "line " + std::to_string(line_no) + ": expected 3 columns, got " +
                    std::to_string(cells.size()));
        Triplet t;
        t.anchor = image_index(cells[0]);
        t.positive = image_index(cells[1]);
        t.negative = image_index(cells[2]);
        out.triplets.push_back(t);
    }
    require(header_seen, Err::MalformedRow, "empty csv: " + csv_path.string());
    return out;
}

// exports a manifest split's triplets as the external CSV schema
inline void export_triplets_csv(const DatasetManifest& m, Split split,
                                const std::filesystem::path& csv_path) {
    std::string out = "anchor,positive,negative\n";
    const auto csv_dir = csv_path.has_parent_path() ? csv_path.parent_path()
                                                    : std::filesystem::path(".");
    const auto rel = std::filesystem::relative(m.root, csv_dir);
    for (const Triplet& t : m.triplets(split)) {
        auto file = [&](int id) {
            return (rel / m.images[static_cast<size_t>(id)].file).generic_string();
        };
        out += file(t.anchor) + "," + file(t.positive) + "," + file(t.negative) + "\n";
    }
    write_file_atomic(csv_path, out);
}

}  // namespace steerlab
