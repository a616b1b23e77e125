#pragma once

#include <cmath>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "steerlab/gen_models.hpp"
#include "steerlab/tape.hpp"
#include "steerlab/teacher.hpp"

namespace steerlab {

// Inference-time steering: before (DDIM) or inside (Euler flow) each
// predictor step, the latent is nudged along the normalized gradient of the
// teacher-embedding distance to a target image, then clamped to a hard box.

constexpr double kGradFloor = 1e-12;  // below this the update is skipped, not divided

enum class ScheduleKind { continuous, stop_after, window };

struct GuidanceSchedule {
    ScheduleKind kind = ScheduleKind::continuous;
    int stop_k = 0;
    int win_a = 0, win_b = 0;

    static GuidanceSchedule continuous() { return {}; }
    static GuidanceSchedule stop_after(int k) {
        GuidanceSchedule s;
        s.kind = ScheduleKind::stop_after;
        s.stop_k = k;
        return s;
    }
    static GuidanceSchedule window(int a, int b) {
        GuidanceSchedule s;
        s.kind = ScheduleKind::window;
        s.win_a = a;
        s.win_b = b;
        return s;
    }

    std::string describe() const {
        switch (kind) {
            case ScheduleKind::continuous: return "continuous";
            case ScheduleKind::stop_after: return "stop_after(" + std::to_string(stop_k) + ")";
            case ScheduleKind::window:
                return "window(" + std::to_string(win_a) + "," + std::to_string(win_b) + ")";
        }
        return "?";
    }
};

// elapsed: 0-based count of sampler steps taken so far
inline bool apply_schedule(const GuidanceSchedule& s, int elapsed) {
    switch (s.kind) {
        case ScheduleKind::continuous: return true;
        case ScheduleKind::stop_after: return elapsed < s.stop_k;
        case ScheduleKind::window: return elapsed >= s.win_a && elapsed < s.win_b;
    }
    return false;
}

inline void validate_schedule(const GuidanceSchedule& s, int total_steps) {
    switch (s.kind) {
        case ScheduleKind::continuous: return;
        case ScheduleKind::stop_after:
            require(s.stop_k >= 0 && s.stop_k <= total_steps, Err::ConfigInvalid,
                    "stop_after step outside [0, T]");
            return;
        case ScheduleKind::window:
            require(s.win_a >= 0 && s.win_a <= s.win_b && s.win_b <= total_steps,
                    Err::ConfigInvalid, "window bounds outside [0, T]");
            return;
    }
}

struct GuidanceConfig {
    double alpha = 2.5;
    double clamp_lo = -5.0;
    double clamp_hi = 5.0;
    GuidanceSchedule schedule;
    bool normalize = true;  // false reproduces the raw-gradient form of the flow update
    Tensor target_image;    // [3,32,32]
    std::string target_ref; // provenance label echoed into summaries
};

inline void validate(const GuidanceConfig& g, int total_steps) {
    require(g.alpha >= 0.0, Err::ConfigInvalid, "guidance scale must be >= 0");
    require(g.clamp_lo < g.clamp_hi, Err::ConfigInvalid, "clamp_lo must be < clamp_hi");
    require(g.target_image.rank() == 3, Err::ConfigInvalid, "guidance target image missing");
    validate_schedule(g.schedule, total_steps);
}

struct TrajectorySample {
    int step = 0;            // 0-based sampler step
    double loss = 0.0;       // L_HPE at this step (before any update)
    double grad_norm = 0.0;  // gradient L2 norm before normalization
    double update_norm = 0.0;  // actual latent displacement due to guidance
    double z_min = 0.0, z_max = 0.0, z_mean = 0.0;
    bool applied = false;
};

struct SteerResult {
    Tensor final_latent;  // [1 x D]
    Tensor final_image;   // [3,32,32]
    double final_hpe_distance = 0.0;
    std::vector<TrajectorySample> trajectory;
    GuidanceConfig config;
    uint64_t seed = 0;
    std::string paradigm;  // "ddim" | "flow"

    int applied_count() const {
        int n = 0;
        for (const auto& s : trajectory) n += s.applied ? 1 : 0;
        return n;
    }
};

// NonFinite divergence during steering; carries the partial trajectory
class SteerDiverged : public Error {
public:
    SteerDiverged(const Error& cause, SteerResult partial)
        : Error(Err::NonFinite, std::string("steering diverged: ") + cause.what()),
          partial_(std::move(partial)) {}
    const SteerResult& partial() const { return partial_; }

private:
    SteerResult partial_;
};

// ---------------------------------------------------------------------------
// Core steering primitives
// ---------------------------------------------------------------------------

// L_HPE = || F(D(z)) - e_target ||^2, on tape, differentiable w.r.t. z
inline Tensor guidance_loss(Tape* tp, const Tensor& z, const Tensor& target_embedding,
                            EmbeddingNet& teacher, Decoder& decoder) {
    Tensor image = decode(tp, decoder, z);
    Tensor e = embed(tp, teacher, image);
    return sum(tp, square(tp, sub(tp, e, target_embedding)));
}

struct GuidedUpdate {
    Tensor z;           // updated latent
    bool applied = false;
    double grad_norm = 0.0;
    double update_norm = 0.0;
};

// Eq.-3-style normalized descent step. Displacement norm is exactly alpha
// when the gradient is nonzero; zero gradients skip the update entirely.
inline GuidedUpdate guided_update(const Tensor& z, const Tensor& grad, double alpha,
                                  bool normalize = true) {
    require(grad.same_shape(z), Err::ShapeMismatch, "gradient shape differs from latent");
    GuidedUpdate out;
    double norm_sq = 0.0;
    for (double v : grad.data) norm_sq += v * v;
    out.grad_norm = std::sqrt(norm_sq);
    if (alpha == 0.0 || out.grad_norm <= kGradFloor) {
        out.z = z;
        return out;
    }
    const double scale = normalize ? alpha / out.grad_norm : alpha;
    out.z = Tensor(z.shape);
    double disp_sq = 0.0;
    for (size_t i = 0; i < z.numel(); ++i) {
        const double d = scale * grad.data[i];
        out.z.data[i] = z.data[i] - d;
        disp_sq += d * d;
    }
    out.update_norm = std::sqrt(disp_sq);
    out.applied = true;
    return out;
}

inline Tensor clamp_latent(const Tensor& z, double lo, double hi) {
    require(lo < hi, Err::ConfigInvalid, "clamp bounds inverted");
    Tensor out(z.shape);
    for (size_t i = 0; i < z.numel(); ++i) out.data[i] = std::clamp(z.data[i], lo, hi);
    return out;
}

namespace detail {

struct ZStats {
    double mn, mx, mean;
};

inline ZStats z_stats(const Tensor& z) {
    double mn = z.data[0], mx = z.data[0], sum = 0.0;
    for (double v : z.data) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
        sum += v;
    }
    return {mn, mx, sum / static_cast<double>(z.numel())};
}

// gradient of the guidance loss w.r.t. the latent, plus the loss value
inline std::pair<Tensor, double> guidance_gradient(const Tensor& z, const Tensor& target_emb,
                                                   EmbeddingNet& teacher, Decoder& decoder) {
    Tape tape;
    Tensor leaf = z;
    leaf.requires_grad = true;
    tape.watch(leaf);
    Tensor loss = guidance_loss(&tape, leaf, target_emb, teacher, decoder);
    tape.backward(loss);
    const Tensor* g = tape.grad(leaf);
    require(g != nullptr, Err::DetachedRoot, "guidance gradient missing");
    return {*g, loss.item()};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Guided samplers
// ---------------------------------------------------------------------------

// DDIM with the gradient correction applied immediately before each
// predictor step. alpha = 0 is bit-identical to the unguided chain: the
// guidance sub-step (update and clamp included) is skipped entirely.
inline SteerResult guided_ddim_sample(const EpsFn& eps_fn, EmbeddingNet& teacher,
                                      Decoder& decoder, const NoiseSchedule& schedule,
                                      const GuidanceConfig& guidance, uint64_t seed) {
    validate(guidance, schedule.T);
    SteerResult result;
    result.config = guidance;
    result.seed = seed;
    result.paradigm = "ddim";
    const Tensor target_emb = embed(nullptr, teacher, guidance.target_image);

    Tensor z = initial_latent(decoder.latent_dim(), seed);
    try {
        for (int i = 0; i < schedule.T; ++i) {
            const int t = schedule.T - 1 - i;
            TrajectorySample ts;
            ts.step = i;
            if (guidance.alpha > 0.0 && apply_schedule(guidance.schedule, i)) {
                auto [grad, loss] =
                    detail::guidance_gradient(z, target_emb, teacher, decoder);
                ts.loss = loss;
                GuidedUpdate up = guided_update(z, grad, guidance.alpha, guidance.normalize);
                ts.grad_norm = up.grad_norm;
                ts.update_norm = up.update_norm;
                ts.applied = up.applied;
                if (up.applied)
                    z = clamp_latent(up.z, guidance.clamp_lo, guidance.clamp_hi);
            } else {
                ts.loss =
                    guidance_loss(nullptr, z, target_emb, teacher, decoder).item();
            }
            const auto st = detail::z_stats(z);
            ts.z_min = st.mn;
            ts.z_max = st.mx;
            ts.z_mean = st.mean;
            result.trajectory.push_back(ts);

            z = ddim_step(z, eps_fn(z, t), t, t - 1, schedule);
        }
    } catch (const SteerDiverged&) {
        throw;
    } catch (const Error& e) {
        if (e.code() != Err::NonFinite) throw;
        result.final_latent = z;
        throw SteerDiverged(e, std::move(result));
    }
    result.final_latent = z;
    result.final_image = decode(nullptr, decoder, z);
    result.final_hpe_distance = hpe_distance(teacher, result.final_image, guidance.target_image);
    return result;
}

// Guided Euler solver: the normalized guidance gradient rides the velocity
// field, z' = z + (v - alpha * g_hat) * dt, clamped after each guided step.
inline SteerResult guided_flow_sample(const VelFn& vel_fn, EmbeddingNet& teacher,
                                      Decoder& decoder, int steps,
                                      const GuidanceConfig& guidance, uint64_t seed) {
    require(steps >= 1, Err::ConfigInvalid, "flow sampling needs >= 1 step");
    validate(guidance, steps);
    SteerResult result;
    result.config = guidance;
    result.seed = seed;
    result.paradigm = "flow";
    const Tensor target_emb = embed(nullptr, teacher, guidance.target_image);
    const double dt = 1.0 / steps;

    Tensor z = initial_latent(decoder.latent_dim(), seed);
    try {
        for (int k = 0; k < steps; ++k) {
            const double t = k * dt;
            TrajectorySample ts;
            ts.step = k;
            Tensor v = vel_fn(z, t);
            bool guided = false;
            if (guidance.alpha > 0.0 && apply_schedule(guidance.schedule, k)) {
                auto [grad, loss] =
                    detail::guidance_gradient(z, target_emb, teacher, decoder);
                ts.loss = loss;
                double norm_sq = 0.0;
                for (double gv : grad.data) norm_sq += gv * gv;
                ts.grad_norm = std::sqrt(norm_sq);
                if (ts.grad_norm > kGradFloor) {
                    const double scale =
                        guidance.normalize ? guidance.alpha / ts.grad_norm : guidance.alpha;
                    Tensor znext(z.shape);
                    double disp_sq = 0.0;
                    for (size_t i = 0; i < z.numel(); ++i) {
                        const double gterm = scale * grad.data[i] * dt;
                        znext.data[i] = z.data[i] + v.data[i] * dt - gterm;
                        disp_sq += gterm * gterm;
                    }
                    ts.update_norm = std::sqrt(disp_sq);
                    ts.applied = true;
                    z = clamp_latent(znext, guidance.clamp_lo, guidance.clamp_hi);
                    guided = true;
                }
            } else {
                ts.loss =
                    guidance_loss(nullptr, z, target_emb, teacher, decoder).item();
            }
            if (!guided) z = euler_step(z, v, dt);
            const auto st = detail::z_stats(z);
            ts.z_min = st.mn;
            ts.z_max = st.mx;
            ts.z_mean = st.mean;
            result.trajectory.push_back(ts);
        }
    } catch (const SteerDiverged&) {
        throw;
    } catch (const Error& e) {
        if (e.code() != Err::NonFinite) throw;
        result.final_latent = z;
        throw SteerDiverged(e, std::move(result));
    }
    result.final_latent = z;
    result.final_image = decode(nullptr, decoder, z);
    result.final_hpe_distance = hpe_distance(teacher, result.final_image, guidance.target_image);
    return result;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

inline std::string trajectory_to_csv(const SteerResult& r) {
    std::string out = "step,loss,grad_norm,z_min,z_max,z_mean,applied\n";
    char buf[256];
    for (const auto& s : r.trajectory) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", s.step, s.loss,
                      s.grad_norm, s.z_min, s.z_max, s.z_mean, s.applied ? 1 : 0);
        out += buf;
    }
    return out;
}

inline nlohmann::json schedule_to_json(const GuidanceSchedule& s) {
    nlohmann::json j;
    switch (s.kind) {
        case ScheduleKind::continuous: j["kind"] = "continuous"; break;
        case ScheduleKind::stop_after:
            j["kind"] = "stop_after";
            j["k"] = s.stop_k;
            break;
        case ScheduleKind::window:
            j["kind"] = "window";
            j["a"] = s.win_a;
            j["b"] = s.win_b;
            break;
    }
    return j;
}

inline nlohmann::json steer_summary_json(const SteerResult& r) {
    nlohmann::json j;
    j["paradigm"] = r.paradigm;
    j["seed"] = r.seed;
    j["final_hpe_distance"] = r.final_hpe_distance;
    j["steps"] = r.trajectory.size();
    j["applied_steps"] = r.applied_count();
    j["config"] = {{"alpha", r.config.alpha},
                   {"clamp_lo", r.config.clamp_lo},
                   {"clamp_hi", r.config.clamp_hi},
                   {"normalize", r.config.normalize},
                   {"schedule", schedule_to_json(r.config.schedule)},
                   {"target", r.config.target_ref}};
    return j;
}

}  // namespace steerlab
