#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "steerlab/optim.hpp"
#include "steerlab/rng.hpp"
#include "steerlab/tape.hpp"

namespace steerlab {

enum class Activation { tanh_act, relu_act };

inline Activation activation_from_tag(const std::string& tag) {
    if (tag == "tanh") return Activation::tanh_act;
    if (tag == "relu") return Activation::relu_act;
    raise(Err::ConfigInvalid, "unknown activation tag: " + tag);
}

inline const char* activation_tag(Activation a) {
    return a == Activation::tanh_act ? "tanh" : "relu";
}

// Registers an affine stack "<prefix>.w0/b0, .w1/b1, ..." spanning
// widths[0] -> widths.back(). Xavier-uniform weights, zero biases.
inline void init_mlp(ParamSet& ps, const std::string& prefix, const std::vector<int>& widths,
                     Rng& rng) {
    require(widths.size() >= 2, Err::ConfigInvalid, "mlp needs at least input and output widths");
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        const int in = widths[l], out = widths[l + 1];
        Tensor w({in, out});
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        for (double& v : w.data) v = rng.uniform(-bound, bound);
        ps.add(prefix + ".w" + std::to_string(l), std::move(w));
        ps.add(prefix + ".b" + std::to_string(l), Tensor({1, out}));
    }
}

inline int mlp_depth(const ParamSet& ps, const std::string& prefix) {
    int l = 0;
    while (ps.has(prefix + ".w" + std::to_string(l))) ++l;
    require(l > 0, Err::MissingArtifact, "no mlp parameters under prefix " + prefix);
    return l;
}

// x: [B x in]. Hidden layers activated; the last layer is linear.
inline Tensor mlp_forward(Tape* tp, ParamSet& ps, const std::string& prefix, const Tensor& x,
                          Activation act) {
    require(x.rank() == 2, Err::ShapeMismatch, "mlp_forward expects [batch x features]");
    const int depth = mlp_depth(ps, prefix);
    const int batch = x.shape[0];
    Tensor ones = Tensor::full({batch, 1}, 1.0);
    Tensor h = x;
    for (int l = 0; l < depth; ++l) {
        Tensor& w = ps.get(prefix + ".w" + std::to_string(l));
        Tensor& b = ps.get(prefix + ".b" + std::to_string(l));
        Tensor z = matmul(tp, h, w);
        // row-broadcast the bias via ones [B x 1] * b [1 x out]
        z = add(tp, z, batch == 1 ? b : matmul(tp, ones, b));
        if (l + 1 < depth)
            h = act == Activation::tanh_act ? steerlab::tanh(tp, z) : relu(tp, z);
        else
            h = z;
    }
    return h;
}

// Sinusoidal position embedding of a (possibly fractional) timestep.
inline Tensor time_embedding(double position, int dim) {
    require(dim > 0 && dim % 2 == 0, Err::ConfigInvalid, "time embedding dim must be even");
    Tensor out({1, dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        out.data[static_cast<size_t>(2 * i)] = std::sin(position * freq);
        out.data[static_cast<size_t>(2 * i + 1)] = std::cos(position * freq);
    }
    return out;
}

}  // namespace steerlab
