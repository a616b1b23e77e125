#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "steerlab/gen_models.hpp"
#include "support/catch_helpers.hpp"
#include "support/fd_check.hpp"

using namespace steerlab;
namespace fs = std::filesystem;

namespace {

struct World {
    DatasetManifest manifest;
    std::vector<Tensor> images;
};

World tiny_world(int n_images, uint64_t seed, const char* tag) {
    DatasetConfig cfg;
    cfg.n_images = n_images;
    cfg.seed = seed;
    cfg.val_fraction = 0.0;
    cfg.train_triplet_count = 0;
    cfg.val_triplet_count = 0;
    auto dir = fs::temp_directory_path() / ("steerlab_gen_" + std::string(tag));
    fs::remove_all(dir);
    World w;
    w.manifest = build_dataset(cfg, dir);
    w.images = load_dataset_images(w.manifest);
    return w;
}

// single-image manifest for the overfit oracles
World one_image_world(uint64_t seed) {
    World w;
    Rng rng(seed);
    auto img = render_sampled(Shape::circle, TextureKind::solid, seed, rng);
    Tensor flat({1, kImageFeatures});
    flat.data = img.pixels.data;
    w.images.push_back(img.pixels);
    ImageRecord rec;
    rec.id = 0;
    rec.shape = Shape::circle;
    rec.texture = TextureKind::solid;
    w.manifest.images.push_back(rec);
    w.manifest.train_ids = {0};
    return w;
}

double image_mse(const Tensor& a_flat, const Tensor& b_pixels) {
    double s = 0.0;
    for (size_t i = 0; i < a_flat.numel(); ++i) {
        const double d = a_flat.data[i] - b_pixels.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a_flat.numel());
}

}  // namespace

TEST_CASE("noise schedule invariants", "[gen]") {
    auto s = NoiseSchedule::linear();
    REQUIRE(s.T == 50);
    REQUIRE(s.alpha_bars.front() > 0.99);   // alpha_bar[0] close to 1
    REQUIRE(s.alpha_bars.back() < 0.01);    // alpha_bar[T-1] close to 0
    for (int t = 0; t < s.T; ++t) {
        REQUIRE(s.betas[static_cast<size_t>(t)] > 0.0);
        REQUIRE(s.betas[static_cast<size_t>(t)] < 1.0);
        if (t > 0) {
            REQUIRE(s.betas[static_cast<size_t>(t)] > s.betas[static_cast<size_t>(t - 1)]);
            REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));  // strictly decreasing
        }
    }
    REQUIRE(s.alpha_bar(-1) == 1.0);
    REQUIRE_ERR(s.alpha_bar(50), Err::StepOutOfRange);
    REQUIRE_ERR(NoiseSchedule::linear(1), Err::ConfigInvalid);
}

TEST_CASE("forward diffusion endpoints and moments", "[gen]") {
    auto s = NoiseSchedule::linear();
    Rng rng(3);
    Tensor x0({1, 16});
    for (double& v : x0.data) v = rng.uniform(0, 1);

    SECTION("abar ~ 1 keeps the signal") {
        Tensor noise({1, 16});
        for (double& v : noise.data) v = rng.normal();
        Tensor z = forward_diffuse(x0, 0, noise, s);
        for (size_t i = 0; i < z.numel(); ++i)
            REQUIRE(z.data[i] == Catch::Approx(x0.data[i]).margin(0.02));
    }
    SECTION("abar ~ 0 is nearly pure noise") {
        Tensor noise({1, 16});
        for (double& v : noise.data) v = rng.normal();
        Tensor z = forward_diffuse(x0, s.T - 1, noise, s);
        for (size_t i = 0; i < z.numel(); ++i)
            REQUIRE(z.data[i] == Catch::Approx(noise.data[i]).margin(0.1));
    }
    SECTION("Monte-Carlo second moment") {
        const int t = 25;
        const double ab = s.alpha_bar(t);
        double x0_sq = 0.0;
        for (double v : x0.data) x0_sq += v * v;
        double mean_sq = 0.0;
        const int draws = 1000;
        for (int d = 0; d < draws; ++d) {
            Tensor noise({1, 16});
            for (double& v : noise.data) v = rng.normal();
            Tensor z = forward_diffuse(x0, t, noise, s);
            for (double v : z.data) mean_sq += v * v;
        }
        mean_sq /= draws;
        const double expected = ab * x0_sq + (1.0 - ab) * 16.0;
        REQUIRE(mean_sq == Catch::Approx(expected).epsilon(0.05));
    }
    SECTION("step range errors") {
        Tensor noise = Tensor({1, 16});
        REQUIRE_ERR(forward_diffuse(x0, -1, noise, s), Err::StepOutOfRange);
        REQUIRE_ERR(forward_diffuse(x0, 50, noise, s), Err::StepOutOfRange);
    }
}

TEST_CASE("ddim step algebra", "[gen]") {
    auto s = NoiseSchedule::linear();
    Rng rng(11);
    Tensor z({1, 12}), eps({1, 12});
    for (double& v : z.data) v = rng.normal();
    for (double& v : eps.data) v = rng.normal();

    SECTION("t_prev = -1 returns x0_hat exactly") {
        const int t = 20;
        Tensor out = ddim_step(z, eps, t, -1, s);
        const double ab = s.alpha_bar(t);
        for (size_t i = 0; i < z.numel(); ++i) {
            const double x0_hat = (z.data[i] - std::sqrt(1 - ab) * eps.data[i]) / std::sqrt(ab);
            REQUIRE(out.data[i] == Catch::Approx(x0_hat).margin(1e-12));
        }
    }
    SECTION("true noise inverts forward diffusion") {
        Tensor x0({1, 12});
        for (double& v : x0.data) v = rng.uniform(0, 1);
        const int t = 33;
        Tensor zt = forward_diffuse(x0, t, eps, s);
        Tensor back = ddim_step(zt, eps, t, -1, s);
        for (size_t i = 0; i < x0.numel(); ++i)
            REQUIRE(back.data[i] == Catch::Approx(x0.data[i]).margin(1e-9));
    }
    SECTION("composition consistency with frozen eps") {
        // t -> s -> r equals direct t -> r when eps_pred is held fixed
        Tensor via = ddim_step(ddim_step(z, eps, 40, 25, s), eps, 25, 10, s);
        Tensor direct = ddim_step(z, eps, 40, 10, s);
        for (size_t i = 0; i < z.numel(); ++i)
            REQUIRE(via.data[i] == Catch::Approx(direct.data[i]).margin(1e-9));
    }
    SECTION("step order validation") {
        REQUIRE_ERR(ddim_step(z, eps, 10, 10, s), Err::StepOrderInvalid);
        REQUIRE_ERR(ddim_step(z, eps, 10, -2, s), Err::StepOrderInvalid);
    }
}

TEST_CASE("flow pair identities", "[gen]") {
    Rng rng(5);
    Tensor x0({1, 10}), x1({1, 10});
    for (double& v : x0.data) v = rng.uniform(0, 1);
    for (double& v : x1.data) v = rng.normal();

    auto at0 = flow_pair(x0, x1, 0.0);
    REQUIRE(at0.point.data == x1.data);
    auto at1 = flow_pair(x0, x1, 1.0);
    REQUIRE(at1.point.data == x0.data);
    for (size_t i = 0; i < x0.numel(); ++i)
        REQUIRE(at0.velocity.data[i] == Catch::Approx(x0.data[i] - x1.data[i]));

    SECTION("interpolant identity point(t) + (1-t) v = x0 for all t") {
        for (double t : {0.0, 0.17, 0.5, 0.83, 1.0}) {
            auto fp = flow_pair(x0, x1, t);
            for (size_t i = 0; i < x0.numel(); ++i)
                REQUIRE(fp.point.data[i] + (1 - t) * fp.velocity.data[i] ==
                        Catch::Approx(x0.data[i]).margin(1e-12));
        }
    }
    REQUIRE_ERR(flow_pair(x0, x1, -0.1), Err::TOutOfRange);
    REQUIRE_ERR(flow_pair(x0, x1, 1.1), Err::TOutOfRange);
}

TEST_CASE("euler step arithmetic", "[gen]") {
    Tensor z({1, 4});
    Tensor v = Tensor::full({1, 4}, 1.0);
    SECTION("zero velocity is a fixed point") {
        Tensor out = euler_step(z, Tensor({1, 4}), 0.02);
        REQUIRE(out.data == z.data);
    }
    SECTION("unit velocity moves by dt") {
        Tensor out = euler_step(z, v, 0.02);
        for (double x : out.data) REQUIRE(x == Catch::Approx(0.02));
    }
    SECTION("constant velocity telescopes exactly") {
        Tensor cur = z;
        for (int i = 0; i < 50; ++i) cur = euler_step(cur, v, 0.02);
        for (double x : cur.data) REQUIRE(x == Catch::Approx(1.0).margin(1e-12));
    }
    REQUIRE_ERR(euler_step(z, v, 0.0), Err::TOutOfRange);
}

TEST_CASE("squash and identity decoder", "[gen]") {
    SECTION("identity on the band, range (0,1) outside") {
        Tensor z({1, 7}, {-3.0, 0.05, 0.1, 0.5, 0.9, 0.95, 6.0});
        Tensor out = squash_to_unit(nullptr, z);
        REQUIRE(out.data[2] == Catch::Approx(0.1).margin(1e-12));   // band edges exact
        REQUIRE(out.data[3] == Catch::Approx(0.5).margin(1e-12));
        REQUIRE(out.data[4] == Catch::Approx(0.9).margin(1e-12));
        for (double v : out.data) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
        REQUIRE(out.data[0] < 0.01);   // deep tail
        REQUIRE(out.data[6] > 0.99);
    }
    SECTION("monotone") {
        Tensor z({1, 200});
        for (int i = 0; i < 200; ++i) z.data[static_cast<size_t>(i)] = -6.0 + 0.06 * i;
        Tensor out = squash_to_unit(nullptr, z);
        for (int i = 1; i < 200; ++i)
            REQUIRE(out.data[static_cast<size_t>(i)] >= out.data[static_cast<size_t>(i - 1)]);
        // strictly increasing where the tails have not underflowed
        for (int i = 1; i < 200; ++i)
            if (z.data[static_cast<size_t>(i)] > -3.0 && z.data[static_cast<size_t>(i)] < 4.0)
                REQUIRE(out.data[static_cast<size_t>(i)] > out.data[static_cast<size_t>(i - 1)]);
    }
    SECTION("decode shapes and pass-through") {
        Decoder dec = Decoder::identity();
        Tensor z({1, kImageFeatures});
        Rng rng(8);
        for (double& v : z.data) v = rng.uniform(0.1, 0.9);  // inside the band
        Tensor img = decode(nullptr, dec, z);
        REQUIRE(img.shape == std::vector<int>{3, 32, 32});
        for (size_t i = 0; i < z.numel(); ++i)
            REQUIRE(img.data[i] == Catch::Approx(z.data[i]).margin(1e-12));
        REQUIRE_ERR(decode(nullptr, dec, Tensor({1, 5})), Err::ShapeMismatch);
    }
    SECTION("squash gradient matches finite differences") {
        fdtest::Rng rng(31);
        Tensor z = fdtest::random_tensor({1, 24}, rng, -2.5, 3.0);
        // keep away from the C^1 joins at 0.1 and 0.9 where FD truncation bites
        for (double& v : z.data) {
            if (std::abs(v - 0.1) < 5e-3) v += 0.01;
            if (std::abs(v - 0.9) < 5e-3) v += 0.01;
        }
        Tensor w = fdtest::random_tensor({1, 24}, rng);
        auto res = fdtest::check_case(
            [&](Tape* tp, std::vector<Tensor>& xs) {
                return fdtest::scalarize(tp, squash_to_unit(tp, xs[0]), w);
            },
            {z});
        REQUIRE(res.max_err < 1e-4);
    }
}

TEST_CASE("latent net shapes and time embedding", "[gen]") {
    LatentNet net = LatentNet::create(64, 5, 32, 8);
    Tensor z({2, 64});
    Tensor out = latent_net_forward(nullptr, net, z, {3.0, 17.0});
    REQUIRE(out.shape == std::vector<int>{2, 64});  // output matches latent shape

    Tensor e1 = time_embedding(3.0, 8);
    Tensor e2 = time_embedding(3.0, 8);
    REQUIRE(e1.data == e2.data);
    Tensor e3 = time_embedding(4.0, 8);
    REQUIRE(e1.data != e3.data);
    for (double v : e1.data) REQUIRE(std::abs(v) <= 1.0);
}

TEST_CASE("ddim sampling with a perfect-oracle denoiser recovers the image", "[gen]") {
    World w = one_image_world(77);
    auto s = NoiseSchedule::linear();
    Tensor x0({1, kImageFeatures});
    x0.data = w.images[0].data;

    // the oracle inverts forward_diffuse: eps = (z - sqrt(abar) x0) / sqrt(1-abar)
    EpsFn oracle = [&](const Tensor& z, int t) {
        const double ab = s.alpha_bar(t);
        Tensor eps(z.shape);
        for (size_t i = 0; i < z.numel(); ++i)
            eps.data[i] = (z.data[i] - std::sqrt(ab) * x0.data[i]) / std::sqrt(1.0 - ab);
        return eps;
    };
    Tensor out = ddim_sample(oracle, s, kImageFeatures, 123);
    REQUIRE(image_mse(out, w.images[0]) < 0.01);
}

TEST_CASE("unguided sampling is bit-deterministic per seed", "[gen]") {
    World w = one_image_world(78);
    auto s = NoiseSchedule::linear();
    GenTrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.hidden = 64;
    cfg.seed = 5;
    auto d = train_denoiser(w.manifest, w.images, s, cfg);
    auto v = train_velocity(w.manifest, w.images, 50, cfg);

    Tensor a = ddim_sample(eps_from_net(d.net, s), s, kImageFeatures, 42);
    Tensor b = ddim_sample(eps_from_net(d.net, s), s, kImageFeatures, 42);
    REQUIRE(a.data == b.data);
    Tensor c = ddim_sample(eps_from_net(d.net, s), s, kImageFeatures, 43);
    REQUIRE(a.data != c.data);

    Tensor fa = flow_sample(velocity_from_net(v.net, 50), 50, kImageFeatures, 42);
    Tensor fb = flow_sample(velocity_from_net(v.net, 50), 50, kImageFeatures, 42);
    REQUIRE(fa.data == fb.data);
}

TEST_CASE("generator training is deterministic per seed", "[gen][train]") {
    World w = tiny_world(60, 21, "det");
    auto s = NoiseSchedule::linear();
    GenTrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.hidden = 64;
    cfg.seed = 9;
    auto d1 = train_denoiser(w.manifest, w.images, s, cfg);
    auto d2 = train_denoiser(w.manifest, w.images, s, cfg);
    REQUIRE(d1.net.params.to_bytes() == d2.net.params.to_bytes());
    auto v1 = train_velocity(w.manifest, w.images, 50, cfg);
    auto v2 = train_velocity(w.manifest, w.images, 50, cfg);
    REQUIRE(v1.net.params.to_bytes() == v2.net.params.to_bytes());
}

TEST_CASE("overfit-one-image oracles recover the image", "[gen][train][overfit]") {
    World w = one_image_world(79);
    auto s = NoiseSchedule::linear();
    GenTrainConfig cfg;
    cfg.epochs = 60;  // single image, small net: converges quickly
    cfg.batch_size = 16;
    cfg.hidden = 128;
    cfg.seed = 3;
    cfg.lr = 2e-3;

    SECTION("ddim") {
        auto d = train_denoiser(w.manifest, w.images, s, cfg);
        Tensor out = ddim_sample(eps_from_net(d.net, s), s, kImageFeatures, 1001);
        REQUIRE(image_mse(out, w.images[0]) < 0.01);
    }
    SECTION("flow") {
        auto v = train_velocity(w.manifest, w.images, 50, cfg);
        Tensor out = flow_sample(velocity_from_net(v.net, 50), 50, kImageFeatures, 1001);
        REQUIRE(image_mse(out, w.images[0]) < 0.01);
    }
}

TEST_CASE("tiny autoencoder round trip", "[gen][train][autoenc]") {
    World w = tiny_world(120, 31, "ae");
    AutoencoderTrainConfig cfg;
    cfg.epochs = 50;
    cfg.seed = 4;
    Decoder dec = train_autoencoder(w.manifest, w.images, cfg);
    const double mse = autoencoder_mse(dec, w.manifest, w.images, Split::train);
    INFO("autoencoder train mse " << mse);
    REQUIRE(mse < 0.02);

    SECTION("decode from the 256-d latent stays in range and differentiates") {
        Tensor img_flat({1, kImageFeatures});
        img_flat.data = w.images[0].data;
        Tensor zl = encode(nullptr, dec, img_flat);
        REQUIRE(zl.shape == std::vector<int>{1, 256});
        Tensor back = decode(nullptr, dec, zl);
        REQUIRE(back.shape == std::vector<int>{3, 32, 32});
        for (double v : back.data) {
            REQUIRE(v > 0.0);
            REQUIRE(v < 1.0);
        }
    }
}
