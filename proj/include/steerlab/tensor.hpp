#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "steerlab/error.hpp"

namespace steerlab {

// Dense row-major tensor of doubles. The universal value type: images,
// latents, embeddings, parameters. `node` is the handle into the active
// Tape once the tensor participates in a recorded computation (-1 while
// detached); `tape_id` identifies which tape the node id belongs to.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    int node = -1;
    uint64_t tape_id = 0;

    Tensor() = default;

    explicit Tensor(std::vector<int> shp) : shape(std::move(shp)) {
        data.assign(numel_of(shape), 0.0);
    }

    Tensor(std::vector<int> shp, std::vector<double> values)
        : shape(std::move(shp)), data(std::move(values)) {
        require(numel_of(shape) == data.size(), Err::ShapeMismatch,
                "tensor data length does not match shape");
    }

    static size_t numel_of(const std::vector<int>& shp) {
        size_t n = 1;
        for (int d : shp) {
            require(d >= 0, Err::ShapeMismatch, "negative dimension");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp)); }

    static Tensor full(std::vector<int> shp, double v) {
        Tensor t(std::move(shp));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return numel() == 1; }

    // 2-D accessors (row-major)
    int rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? 1 : -1); }
    int cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : -1); }

    double& at(size_t i) { return data[i]; }
    double at(size_t i) const { return data[i]; }

    double item() const {
        require(is_scalar(), Err::ShapeMismatch, "item() on non-scalar tensor");
        return data[0];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor detached() const {
        Tensor t;
        t.shape = shape;
        t.data = data;
        return t;
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// ---------------------------------------------------------------------------
// Tensor file format: magic "STLB", u32 rank, u32 dims[rank], then
// little-endian float32 payload, row-major. Values are stored at f32
// precision regardless of the in-memory double representation.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& buf, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    buf.append(b, 4);
}

inline uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string tensor_to_bytes(const Tensor& t) {
    std::string buf;
    buf.reserve(8 + 4 * t.shape.size() + 4 * t.numel());
    buf += "STLB";
    detail::put_u32(buf, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::put_u32(buf, static_cast<uint32_t>(d));
    for (double v : t.data) {
        float f = static_cast<float>(v);
        uint32_t u;
        std::memcpy(&u, &f, 4);
        detail::put_u32(buf, u);
    }
    return buf;
}

inline Tensor tensor_from_bytes(const std::string& buf, const std::string& origin = "<bytes>") {
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    require(buf.size() >= 8 && std::memcmp(p, "STLB", 4) == 0, Err::IoError,
            "not a tensor file: " + origin);
    uint32_t rank = detail::get_u32(p + 4);
    require(buf.size() >= 8 + 4ull * rank, Err::IoError, "truncated tensor header: " + origin);
    std::vector<int> shape(rank);
    size_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<int>(detail::get_u32(p + 8 + 4 * i));
        n *= static_cast<size_t>(shape[i]);
    }
    size_t off = 8 + 4ull * rank;
    require(buf.size() == off + 4 * n, Err::IoError, "tensor payload size mismatch: " + origin);
    Tensor t(shape);
    for (size_t i = 0; i < n; ++i) {
        uint32_t u = detail::get_u32(p + off + 4 * i);
        float f;
        std::memcpy(&f, &u, 4);
        t.data[i] = static_cast<double>(f);
    }
    return t;
}

// Atomic write: temp file in the target directory, then rename. An
// interrupted run never leaves a partial artifact at the final path.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(out.good(), Err::IoError, "cannot open " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        require(out.good(), Err::IoError, "short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Err::IoError, "cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

inline void save_tensor(const Tensor& t, const std::filesystem::path& path) {
    write_file_atomic(path, tensor_to_bytes(t));
}

inline Tensor load_tensor(const std::filesystem::path& path) {
    require(std::filesystem::exists(path), Err::MissingImage, "no such file: " + path.string());
    return tensor_from_bytes(read_file(path), path.string());
}

}  // namespace steerlab
