#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "steerlab/tape.hpp"
#include "steerlab/tensor.hpp"

namespace steerlab {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named parameter tensors plus Adam moment state. Iteration order is the
// map's key order, so updates and serialization are deterministic.
class ParamSet {
public:
    struct Entry {
        Tensor value;
        Tensor m;  // first moment
        Tensor v;  // second moment
    };

    // free-form metadata carried in the checkpoint index (architecture tags)
    nlohmann::json meta = nlohmann::json::object();

    Tensor& add(const std::string& name, Tensor init) {
        init.requires_grad = true;
        init.node = -1;
        Entry e;
        e.m = Tensor(init.shape);
        e.v = Tensor(init.shape);
        e.value = std::move(init);
        auto [it, inserted] = params_.emplace(name, std::move(e));
        require(inserted, Err::ConfigInvalid, "duplicate parameter name: " + name);
        return it->second.value;
    }

    Tensor& get(const std::string& name) {
        auto it = params_.find(name);
        require(it != params_.end(), Err::MissingArtifact, "no parameter named " + name);
        return it->second.value;
    }
    const Tensor& get(const std::string& name) const {
        auto it = params_.find(name);
        require(it != params_.end(), Err::MissingArtifact, "no parameter named " + name);
        return it->second.value;
    }
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    size_t size() const { return params_.size(); }
    int64_t step_count() const { return step_; }

    std::map<std::string, Entry>& entries() { return params_; }
    const std::map<std::string, Entry>& entries() const { return params_; }

    // register every parameter as a leaf on the tape for this step
    void attach(Tape& tape) {
        for (auto& [name, e] : params_) tape.watch(e.value);
    }

    // Adam update from the gradients accumulated on the tape. Parameters the
    // tape holds no gradient for are left untouched (their moments included).
    void adam_step(const Tape& tape, const AdamConfig& cfg) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
        for (auto& [name, e] : params_) {
            const Tensor* g = tape.grad(e.value);
            if (!g) continue;
            require(g->same_shape(e.value), Err::MissingGradShape,
                    "gradient shape " + shape_str(g->shape) + " != param shape " +
                        shape_str(e.value.shape) + " for " + name);
            update_one(e, *g, cfg, bc1, bc2);
        }
    }

    // same update from an explicit name -> gradient map
    void adam_step_grads(const std::map<std::string, Tensor>& grads, const AdamConfig& cfg) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
        for (const auto& [name, g] : grads) {
            auto it = params_.find(name);
            require(it != params_.end(), Err::MissingGradShape, "gradient for unknown param " + name);
            require(g.same_shape(it->second.value), Err::MissingGradShape,
                    "gradient shape mismatch for " + name);
            update_one(it->second, g, cfg, bc1, bc2);
        }
    }

    // ---- checkpoint: length-prefixed JSON index {name -> byte offset}
    // ---- followed by the concatenated tensor records
    std::string to_bytes(bool include_moments = false) const {
        std::string blob;
        nlohmann::json index;
        index["format"] = "steerlab-paramset";
        index["step"] = step_;
        index["meta"] = meta;
        nlohmann::json tensors = nlohmann::json::object();
        auto emit = [&](const std::string& key, const Tensor& t) {
            tensors[key] = blob.size();
            blob += tensor_to_bytes(t);
        };
        for (const auto& [name, e] : params_) {
            emit(name, e.value);
            if (include_moments) {
                emit(name + ".adam_m", e.m);
                emit(name + ".adam_v", e.v);
            }
        }
        index["tensors"] = std::move(tensors);
        std::string header = index.dump();
        std::string out;
        detail::put_u32(out, static_cast<uint32_t>(header.size()));
        out += header;
        out += blob;
        return out;
    }

    static ParamSet from_bytes(const std::string& bytes, const std::string& origin = "<bytes>") {
        require(bytes.size() >= 4, Err::IoError, "truncated checkpoint: " + origin);
        uint32_t hlen = detail::get_u32(reinterpret_cast<const unsigned char*>(bytes.data()));
        require(bytes.size() >= 4ull + hlen, Err::IoError, "truncated checkpoint header: " + origin);
        nlohmann::json index = nlohmann::json::parse(bytes.substr(4, hlen), nullptr, false);
        require(!index.is_discarded() && index.value("format", "") == "steerlab-paramset",
                Err::IoError, "not a paramset checkpoint: " + origin);
        const std::string blob = bytes.substr(4ull + hlen);
        ParamSet ps;
        ps.step_ = index.value("step", int64_t{0});
        if (index.contains("meta")) ps.meta = index["meta"];
        std::map<std::string, Tensor> loose;
        for (auto& [key, off] : index.at("tensors").items()) {
            size_t o = off.get<size_t>();
            require(o < blob.size(), Err::IoError, "offset out of range in " + origin);
            // each record is self-delimiting; hand the tail to the parser
            size_t end = next_record_end(blob, o, origin);
            loose.emplace(key, tensor_from_bytes(blob.substr(o, end - o), origin));
        }
        for (auto& [key, t] : loose) {
            if (key.size() > 7 && key.rfind(".adam_m") == key.size() - 7) {
                ps.params_.at(key.substr(0, key.size() - 7)).m = std::move(t);
            } else if (key.size() > 7 && key.rfind(".adam_v") == key.size() - 7) {
                ps.params_.at(key.substr(0, key.size() - 7)).v = std::move(t);
            } else if (ps.params_.count(key) == 0) {
                ps.add(key, std::move(t));
            }
        }
        return ps;
    }

    void save(const std::filesystem::path& path, bool include_moments = false) const {
        write_file_atomic(path, to_bytes(include_moments));
    }

    static ParamSet load(const std::filesystem::path& path) {
        require(std::filesystem::exists(path), Err::MissingArtifact,
                "checkpoint not found: " + path.string());
        return from_bytes(read_file(path), path.string());
    }

private:
    static void update_one(Entry& e, const Tensor& g, const AdamConfig& cfg, double bc1,
                           double bc2) {
        const size_t n = e.value.numel();
        for (size_t i = 0; i < n; ++i) {
            const double gi = g.data[i];
            e.m.data[i] = cfg.beta1 * e.m.data[i] + (1.0 - cfg.beta1) * gi;
            e.v.data[i] = cfg.beta2 * e.v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            const double mhat = e.m.data[i] / bc1;
            const double vhat = e.v.data[i] / bc2;
            e.value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }

    static size_t next_record_end(const std::string& blob, size_t off, const std::string& origin) {
        require(blob.size() >= off + 8, Err::IoError, "truncated record in " + origin);
        const auto* p = reinterpret_cast<const unsigned char*>(blob.data()) + off;
        uint32_t rank = detail::get_u32(p + 4);
        size_t n = 1;
        require(blob.size() >= off + 8 + 4ull * rank, Err::IoError, "truncated record in " + origin);
        for (uint32_t i = 0; i < rank; ++i) n *= detail::get_u32(p + 8 + 4 * i);
        return off + 8 + 4ull * rank + 4 * n;
    }

    std::map<std::string, Entry> params_;
    int64_t step_ = 0;
};

}  // namespace steerlab
