#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "steerlab/mlp.hpp"
#include "steerlab/optim.hpp"
#include "steerlab/shapeworld.hpp"
#include "steerlab/tape.hpp"
#include "steerlab/teacher.hpp"

namespace steerlab {

// Toy generative students: an epsilon-prediction diffusion model sampled
// with deterministic DDIM, and a flow-matching velocity field sampled with
// an Euler ODE loop. Latents default to pixel space (identity decoder).

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

struct NoiseSchedule {
    int T = 50;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    static NoiseSchedule linear(int T = 50, double beta_lo = 1e-4, double beta_hi = 0.2) {
        require(T >= 2, Err::ConfigInvalid, "schedule needs at least 2 steps");
        require(beta_lo > 0.0 && beta_hi < 1.0 && beta_lo < beta_hi, Err::ConfigInvalid,
                "betas must increase within (0,1)");
        NoiseSchedule s;
        s.T = T;
        double cum = 1.0;
        for (int t = 0; t < T; ++t) {
            const double beta = beta_lo + (beta_hi - beta_lo) * t / (T - 1);
            s.betas.push_back(beta);
            s.alphas.push_back(1.0 - beta);
            cum *= 1.0 - beta;
            s.alpha_bars.push_back(cum);
        }
        return s;
    }

    // alpha_bar with the clean-state convention alpha_bar(-1) = 1
    double alpha_bar(int t) const {
        if (t == -1) return 1.0;
        require(t >= 0 && t < T, Err::StepOutOfRange,
                "timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
        return alpha_bars[static_cast<size_t>(t)];
    }
};

// q-sample: z_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise
inline Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& noise,
                              const NoiseSchedule& schedule) {
    require(t >= 0 && t < schedule.T, Err::StepOutOfRange,
            "forward_diffuse timestep " + std::to_string(t));
    require(x0.same_shape(noise), Err::ShapeMismatch, "x0 and noise shapes differ");
    const double ab = schedule.alpha_bar(t);
    const double ca = std::sqrt(ab), cn = std::sqrt(1.0 - ab);
    Tensor z(x0.shape);
    for (size_t i = 0; i < z.numel(); ++i) z.data[i] = ca * x0.data[i] + cn * noise.data[i];
    return z;
}

// Deterministic DDIM update (eta = 0):
//   x0_hat  = (z_t - sqrt(1-abar_t) * eps) / sqrt(abar_t)
//   z_prev  = sqrt(abar_prev) * x0_hat + sqrt(1-abar_prev) * eps
// t_prev = -1 denotes the clean state (abar = 1), returning x0_hat itself.
inline Tensor ddim_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev,
                        const NoiseSchedule& schedule) {
    require(t > t_prev && t_prev >= -1, Err::StepOrderInvalid,
            "ddim_step requires t > t_prev >= -1, got t=" + std::to_string(t) +
                " t_prev=" + std::to_string(t_prev));
    require(z_t.same_shape(eps_pred), Err::ShapeMismatch, "latent and eps shapes differ");
    const double ab_t = schedule.alpha_bar(t);
    const double ab_p = schedule.alpha_bar(t_prev);
    const double inv_sa = 1.0 / std::sqrt(ab_t);
    const double cn_t = std::sqrt(1.0 - ab_t);
    const double ca_p = std::sqrt(ab_p);
    const double cn_p = std::sqrt(1.0 - ab_p);
    Tensor out(z_t.shape);
    for (size_t i = 0; i < out.numel(); ++i) {
        const double x0_hat = (z_t.data[i] - cn_t * eps_pred.data[i]) * inv_sa;
        out.data[i] = ca_p * x0_hat + cn_p * eps_pred.data[i];
    }
    detail::check_finite(out, "ddim_step");
    return out;
}

// linear interpolant between noise x1 (t=0) and data x0 (t=1)
struct FlowPair {
    Tensor point;
    Tensor velocity;
};

inline FlowPair flow_pair(const Tensor& x0, const Tensor& x1, double t) {
    require(t >= 0.0 && t <= 1.0, Err::TOutOfRange, "flow time must lie in [0,1]");
    require(x0.same_shape(x1), Err::ShapeMismatch, "flow_pair shapes differ");
    FlowPair fp;
    fp.point = Tensor(x0.shape);
    fp.velocity = Tensor(x0.shape);
    for (size_t i = 0; i < x0.numel(); ++i) {
        fp.point.data[i] = (1.0 - t) * x1.data[i] + t * x0.data[i];
        fp.velocity.data[i] = x0.data[i] - x1.data[i];
    }
    return fp;
}

inline Tensor euler_step(const Tensor& z, const Tensor& v, double dt) {
    require(dt > 0.0, Err::TOutOfRange, "euler_step needs dt > 0");
    require(z.same_shape(v), Err::ShapeMismatch, "euler_step shapes differ");
    Tensor out(z.shape);
    for (size_t i = 0; i < z.numel(); ++i) out.data[i] = z.data[i] + v.data[i] * dt;
    return out;
}

// ---------------------------------------------------------------------------
// Latent MLPs (shared structure for the eps-predictor and the velocity field)
// ---------------------------------------------------------------------------

struct LatentNet {
    int latent_dim = kImageFeatures;
    int temb_dim = 32;
    std::vector<int> widths;  // {latent+temb, hidden, hidden, latent}
    Activation act = Activation::relu_act;
    ParamSet params;

    static LatentNet create(int latent_dim, uint64_t seed, int hidden = 512, int temb_dim = 32) {
        LatentNet net;
        net.latent_dim = latent_dim;
        net.temb_dim = temb_dim;
        net.widths = {latent_dim + temb_dim, hidden, hidden, latent_dim};
        Rng rng(hash_combine(seed, 0x9e7));
        init_mlp(net.params, "net", net.widths, rng);
        return net;
    }
};

using DenoiserNet = LatentNet;
using VelocityNet = LatentNet;

// z: [B x latent]; positions: one (possibly fractional) timestep per row
inline Tensor latent_net_forward(Tape* tp, LatentNet& net, const Tensor& z,
                                 const std::vector<double>& positions) {
    require(z.rank() == 2 && z.shape[1] == net.latent_dim, Err::ShapeMismatch,
            "latent net expects [B x " + std::to_string(net.latent_dim) + "]");
    require(static_cast<size_t>(z.shape[0]) == positions.size(), Err::ShapeMismatch,
            "one timestep per batch row");
    Tensor temb({z.shape[0], net.temb_dim});
    for (int r = 0; r < z.shape[0]; ++r) {
        Tensor row = time_embedding(positions[static_cast<size_t>(r)], net.temb_dim);
        std::copy(row.data.begin(), row.data.end(),
                  temb.data.begin() + static_cast<long>(r) * net.temb_dim);
    }
    Tensor x = concat(tp, z, temb, 1);
    return mlp_forward(tp, net.params, "net", x, net.act);
}

// ---------------------------------------------------------------------------
// Decoder D(.)
// ---------------------------------------------------------------------------

enum class DecoderMode { identity, tiny_autoencoder };

// Smooth squash onto [0,1]: exact identity on [0.1, 0.9], C^1 exponential
// tails outside. Keeps the guidance gradient defined for any latent while
// leaving in-range pixels untouched.
constexpr double kSquashBand = 0.1;

inline Tensor squash_to_unit(Tape* tp, const Tensor& z) {
    const double m = kSquashBand;
    const Tensor lo = Tensor::scalar(m);
    const Tensor hi = Tensor::scalar(1.0 - m);
    const Tensor inv_m = Tensor::scalar(-1.0 / m);
    // clamp-like core: m + relu(z-m) - relu(z-(1-m))
    Tensor core = add(tp, lo, sub(tp, relu(tp, sub(tp, z, lo)), relu(tp, sub(tp, z, hi))));
    // low tail: m * (exp(-relu(m-z)/m) - 1)
    Tensor low = mul(tp, lo, sub(tp, exp(tp, mul(tp, relu(tp, sub(tp, lo, z)), inv_m)),
                                 Tensor::scalar(1.0)));
    // high tail: m * (1 - exp(-relu(z-(1-m))/m))
    Tensor high = mul(tp, lo, sub(tp, Tensor::scalar(1.0),
                                  exp(tp, mul(tp, relu(tp, sub(tp, z, hi)), inv_m))));
    Tensor out = add(tp, add(tp, core, low), high);
    // shave the few-ULP overshoot the term regrouping can leave above 1
    return sub(tp, out, relu(tp, sub(tp, out, Tensor::scalar(1.0))));
}

struct Decoder {
    DecoderMode mode = DecoderMode::identity;
    int latent = kImageFeatures;  // 3072 in identity mode, 256 for the tiny autoencoder
    ParamSet params;              // enc.* / dec.* for the autoencoder

    static Decoder identity() { return Decoder{}; }

    static Decoder tiny_autoencoder(uint64_t seed, int latent_dim = 256, int hidden = 512) {
        Decoder d;
        d.mode = DecoderMode::tiny_autoencoder;
        d.latent = latent_dim;
        Rng rng(hash_combine(seed, 0xdec0));
        init_mlp(d.params, "enc", {kImageFeatures, hidden, latent_dim}, rng);
        init_mlp(d.params, "dec", {latent_dim, hidden, kImageFeatures}, rng);
        return d;
    }

    int latent_dim() const { return latent; }
};

// z: [1 x latent] -> image [3,32,32] in [0,1]; differentiable w.r.t. z.
inline Tensor decode(Tape* tp, Decoder& dec, const Tensor& z) {
    require(z.rank() == 2 && z.shape[0] == 1 && z.shape[1] == dec.latent_dim(), Err::ShapeMismatch,
            "decode expects [1 x " + std::to_string(dec.latent_dim()) + "], got " +
                shape_str(z.shape));
    Tensor flat = dec.mode == DecoderMode::identity
                      ? squash_to_unit(tp, z)
                      : squash_to_unit(tp, mlp_forward(tp, dec.params, "dec", z,
                                                       Activation::tanh_act));
    return reshape(tp, flat, {3, kImageSize, kImageSize});
}

// encoder half of the tiny autoencoder (training/latent prep only)
inline Tensor encode(Tape* tp, Decoder& dec, const Tensor& image_flat) {
    require(dec.mode == DecoderMode::tiny_autoencoder, Err::ConfigInvalid,
            "encode requires the tiny_autoencoder mode");
    return mlp_forward(tp, dec.params, "enc", image_flat, Activation::tanh_act);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct GenTrainConfig {
    double lr = 1e-3;
    int epochs = 200;
    int batch_size = 64;
    int hidden = 512;
    int temb_dim = 32;
    uint64_t seed = 11;
};

struct GenTrainResult {
    LatentNet net;
    std::vector<LossRow> curve;  // val columns: val_loss on held-out noise draws
};

namespace detail {

inline Tensor flat_image(const Tensor& img) {
    Tensor f({1, kImageFeatures});
    f.data = img.data;
    return f;
}

inline Tensor gather_flat(const std::vector<Tensor>& images, const std::vector<int>& ids) {
    return gather_images(images, ids);
}

}  // namespace detail

// Denoiser training. The net is parameterized to predict the clean latent
// x0 from (z_t, t); the sampler derives eps_pred algebraically via
// eps = (z_t - sqrt(abar) x0_pred) / sqrt(1-abar). The eps map is affine in
// z_t with a full-rank passthrough a bottlenecked MLP cannot represent, so
// the x0 form is the one that can actually fit at this scale.
inline GenTrainResult train_denoiser(const DatasetManifest& manifest,
                                     const std::vector<Tensor>& images,
                                     const NoiseSchedule& schedule, const GenTrainConfig& cfg) {
    require(!manifest.train_ids.empty(), Err::InsufficientVariety, "empty train split");
    GenTrainResult result;
    result.net = LatentNet::create(kImageFeatures, cfg.seed, cfg.hidden, cfg.temb_dim);
    AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
    Rng root(hash_combine(cfg.seed, 0xdd1));
    const int batches_per_epoch =
        std::max<int>(1, static_cast<int>((manifest.train_ids.size() +
                                           static_cast<size_t>(cfg.batch_size) - 1) /
                                          static_cast<size_t>(cfg.batch_size)));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng = root.split(static_cast<uint64_t>(epoch));
        double epoch_loss = 0.0;
        for (int b = 0; b < batches_per_epoch; ++b) {
            const int bsz = cfg.batch_size;
            Tensor z({bsz, kImageFeatures});
            Tensor target({bsz, kImageFeatures});
            std::vector<double> positions;
            for (int r = 0; r < bsz; ++r) {
                const int id =
                    manifest.train_ids[rng.uniform_int(manifest.train_ids.size())];
                const int t = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(schedule.T)));
                positions.push_back(static_cast<double>(t));
                const double ab = schedule.alpha_bar(t);
                const double ca = std::sqrt(ab), cn = std::sqrt(1.0 - ab);
                const Tensor& img = images[static_cast<size_t>(id)];
                for (int j = 0; j < kImageFeatures; ++j) {
                    const double eps = rng.normal();
                    const double x0 = img.data[static_cast<size_t>(j)];
                    z.data[static_cast<size_t>(r) * kImageFeatures + j] = ca * x0 + cn * eps;
                    target.data[static_cast<size_t>(r) * kImageFeatures + j] = x0;
                }
            }
            Tape tape;
            result.net.params.attach(tape);
            Tensor pred = latent_net_forward(&tape, result.net, z, positions);
            Tensor loss = mean(&tape, square(&tape, sub(&tape, pred, target)));
            tape.backward(loss);
            result.net.params.adam_step(tape, adam);
            epoch_loss += loss.item();
        }
        LossRow row;
        row.epoch = epoch;
        row.train_loss = epoch_loss / batches_per_epoch;
        result.curve.push_back(row);
    }
    return result;
}

// Flow-matching training, same x0 parameterization: with the linear
// interpolant, the marginal velocity is exactly (E[x0|z,t] - z) / (1 - t),
// so the net learns the x0 posterior mean and the sampler applies that
// identity. Training never divides by (1 - t).
inline GenTrainResult train_velocity(const DatasetManifest& manifest,
                                     const std::vector<Tensor>& images, int steps,
                                     const GenTrainConfig& cfg) {
    require(!manifest.train_ids.empty(), Err::InsufficientVariety, "empty train split");
    GenTrainResult result;
    result.net = LatentNet::create(kImageFeatures, cfg.seed, cfg.hidden, cfg.temb_dim);
    AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
    Rng root(hash_combine(cfg.seed, 0xf10));
    const int batches_per_epoch =
        std::max<int>(1, static_cast<int>((manifest.train_ids.size() +
                                           static_cast<size_t>(cfg.batch_size) - 1) /
                                          static_cast<size_t>(cfg.batch_size)));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng = root.split(static_cast<uint64_t>(epoch));
        double epoch_loss = 0.0;
        for (int b = 0; b < batches_per_epoch; ++b) {
            const int bsz = cfg.batch_size;
            Tensor z({bsz, kImageFeatures});
            Tensor target({bsz, kImageFeatures});
            std::vector<double> positions;
            for (int r = 0; r < bsz; ++r) {
                const int id =
                    manifest.train_ids[rng.uniform_int(manifest.train_ids.size())];
                const double t = rng.uniform();
                positions.push_back(t * steps);
                const Tensor& img = images[static_cast<size_t>(id)];
                for (int j = 0; j < kImageFeatures; ++j) {
                    const double x1 = rng.normal();
                    const double x0 = img.data[static_cast<size_t>(j)];
                    z.data[static_cast<size_t>(r) * kImageFeatures + j] = (1.0 - t) * x1 + t * x0;
                    target.data[static_cast<size_t>(r) * kImageFeatures + j] = x0;
                }
            }
            Tape tape;
            result.net.params.attach(tape);
            Tensor pred = latent_net_forward(&tape, result.net, z, positions);
            Tensor loss = mean(&tape, square(&tape, sub(&tape, pred, target)));
            tape.backward(loss);
            result.net.params.adam_step(tape, adam);
            epoch_loss += loss.item();
        }
        LossRow row;
        row.epoch = epoch;
        row.train_loss = epoch_loss / batches_per_epoch;
        result.curve.push_back(row);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Unguided sampling
// ---------------------------------------------------------------------------

constexpr uint64_t kInitNoiseKey = 0x1a7e;

inline Tensor initial_latent(int dim, uint64_t seed) {
    Rng rng(hash_combine(seed, kInitNoiseKey));
    Tensor z({1, dim});
    for (double& v : z.data) v = rng.normal();
    return z;
}

using EpsFn = std::function<Tensor(const Tensor& z, int t)>;
using VelFn = std::function<Tensor(const Tensor& z, double t)>;

// eps_pred derived from the x0-predicting net
inline EpsFn eps_from_net(LatentNet& net, const NoiseSchedule& schedule) {
    return [&net, &schedule](const Tensor& z, int t) {
        Tensor x0 = latent_net_forward(nullptr, net, z, {static_cast<double>(t)});
        const double ab = schedule.alpha_bar(t);
        const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
        Tensor eps(z.shape);
        for (size_t i = 0; i < z.numel(); ++i) eps.data[i] = (z.data[i] - sa * x0.data[i]) / sn;
        return eps;
    };
}

// marginal velocity field from the x0-predicting net: v = (x0_pred - z)/(1-t)
inline VelFn velocity_from_net(LatentNet& net, int steps) {
    return [&net, steps](const Tensor& z, double t) {
        require(t < 1.0, Err::TOutOfRange, "velocity field evaluated at t >= 1");
        Tensor x0 = latent_net_forward(nullptr, net, z, {t * steps});
        const double inv = 1.0 / (1.0 - t);
        Tensor v(z.shape);
        for (size_t i = 0; i < z.numel(); ++i) v.data[i] = (x0.data[i] - z.data[i]) * inv;
        return v;
    };
}

// full T-step deterministic DDIM chain from seed noise; returns the clean latent
inline Tensor ddim_sample(const EpsFn& eps_fn, const NoiseSchedule& schedule, int latent_dim,
                          uint64_t seed) {
    Tensor z = initial_latent(latent_dim, seed);
    for (int t = schedule.T - 1; t >= 0; --t) z = ddim_step(z, eps_fn(z, t), t, t - 1, schedule);
    return z;
}

// Euler integration of the velocity field from t=0 (noise) to t=1
inline Tensor flow_sample(const VelFn& vel_fn, int steps, int latent_dim, uint64_t seed) {
    require(steps >= 1, Err::ConfigInvalid, "flow sampling needs >= 1 step");
    const double dt = 1.0 / steps;
    Tensor z = initial_latent(latent_dim, seed);
    for (int k = 0; k < steps; ++k) z = euler_step(z, vel_fn(z, k * dt), dt);
    return z;
}

// ---------------------------------------------------------------------------
// Tiny autoencoder training (exercises the backprop-through-decoder path)
// ---------------------------------------------------------------------------

struct AutoencoderTrainConfig {
    double lr = 1e-3;
    int epochs = 60;
    int batch_size = 32;
    int latent_dim = 256;
    int hidden = 512;
    uint64_t seed = 13;
};

inline Decoder train_autoencoder(const DatasetManifest& manifest,
                                 const std::vector<Tensor>& images,
                                 const AutoencoderTrainConfig& cfg) {
    require(!manifest.train_ids.empty(), Err::InsufficientVariety, "empty train split");
    Decoder dec = Decoder::tiny_autoencoder(cfg.seed, cfg.latent_dim, cfg.hidden);
    AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
    Rng root(hash_combine(cfg.seed, 0xae0));
    const int batches_per_epoch =
        std::max<int>(1, static_cast<int>(manifest.train_ids.size() /
                                          static_cast<size_t>(cfg.batch_size)));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng = root.split(static_cast<uint64_t>(epoch));
        for (int b = 0; b < batches_per_epoch; ++b) {
            std::vector<int> ids;
            for (int r = 0; r < cfg.batch_size; ++r)
                ids.push_back(manifest.train_ids[rng.uniform_int(manifest.train_ids.size())]);
            Tensor x = gather_images(images, ids);
            Tape tape;
            dec.params.attach(tape);
            Tensor h = mlp_forward(&tape, dec.params, "enc", x, Activation::tanh_act);
            Tensor recon = squash_to_unit(
                &tape, mlp_forward(&tape, dec.params, "dec", h, Activation::tanh_act));
            Tensor loss = mean(&tape, square(&tape, sub(&tape, recon, x)));
            tape.backward(loss);
            dec.params.adam_step(tape, adam);
        }
    }
    return dec;
}

// mean squared reconstruction error of the autoencoder over a split
inline double autoencoder_mse(Decoder& dec, const DatasetManifest& manifest,
                              const std::vector<Tensor>& images, Split split) {
    const auto& ids = manifest.ids(split);
    require(!ids.empty(), Err::InsufficientVariety, "empty split");
    double total = 0.0;
    for (size_t i = 0; i < ids.size(); i += 64) {
        const size_t end = std::min(ids.size(), i + 64);
        std::vector<int> chunk(ids.begin() + static_cast<long>(i),
                               ids.begin() + static_cast<long>(end));
        Tensor x = gather_images(images, chunk);
        Tensor h = mlp_forward(nullptr, dec.params, "enc", x, Activation::tanh_act);
        Tensor recon =
            squash_to_unit(nullptr, mlp_forward(nullptr, dec.params, "dec", h, Activation::tanh_act));
        for (size_t j = 0; j < recon.numel(); ++j) {
            const double d = recon.data[j] - x.data[j];
            total += d * d;
        }
    }
    return total / (static_cast<double>(ids.size()) * kImageFeatures);
}

}  // namespace steerlab
