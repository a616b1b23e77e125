#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "steerlab/teacher.hpp"
#include "support/catch_helpers.hpp"
#include "support/fd_check.hpp"

using namespace steerlab;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* tag) {
    auto p = fs::temp_directory_path() / ("steerlab_teach_" + std::string(tag));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Tensor unit_vec(std::initializer_list<double> v) {
    Tensor t({1, static_cast<int>(v.size())}, std::vector<double>(v));
    return l2norm(nullptr, t);
}

Tensor random_unit(Rng& rng, int dim) {
    Tensor t({1, dim});
    for (double& x : t.data) x = rng.normal();
    return l2norm(nullptr, t);
}

double euclid(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (size_t i = 0; i < a.numel(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    return std::sqrt(s);
}

// small shared dataset for the training smokes
struct World {
    DatasetManifest manifest;
    std::vector<Tensor> images;
};

World make_world(int n_images, uint64_t seed, const char* tag) {
    DatasetConfig cfg;
    cfg.n_images = n_images;  // needs >= 4 images per (shape, texture) cell for a val split
    cfg.seed = seed;
    cfg.val_fraction = 0.25;
    cfg.train_triplet_count = 200;
    cfg.val_triplet_count = 100;
    auto dir = fresh_dir(tag);
    World w;
    w.manifest = build_dataset(cfg, dir);
    w.images = load_dataset_images(w.manifest);
    return w;
}

}  // namespace

TEST_CASE("triplet loss worked arithmetic", "[teacher]") {
    // points on a line give exact pairwise distances
    auto point = [](double x) { return Tensor({1, 2}, {x, 0.0}); };
    SECTION("margin satisfied -> 0") {
        Tensor loss = triplet_loss(nullptr, point(0), point(0.1), point(-0.9), 0.2);
        REQUIRE(loss.item() == 0.0);  // max(0, 0.1 - 0.9 + 0.2)
    }
    SECTION("violating pair -> 0.3") {
        Tensor loss = triplet_loss(nullptr, point(0), point(0.5), point(-0.4), 0.2);
        REQUIRE(loss.item() == Catch::Approx(0.3));
    }
    SECTION("collapsed triple -> margin") {
        Tensor e = unit_vec({0.3, -0.4, 0.5});
        Tensor loss = triplet_loss(nullptr, e, e, e, 0.2);
        REQUIRE(loss.item() == Catch::Approx(0.2));
    }
    SECTION("margin must be positive") {
        Tensor e = unit_vec({1, 0});
        REQUIRE_ERR(triplet_loss(nullptr, e, e, e, 0.0), Err::ConfigInvalid);
    }
}

TEST_CASE("triplet loss nonnegativity and zero set (10k random triples)", "[teacher]") {
    Rng rng(31);
    const double margin = 0.2;
    for (int i = 0; i < 10000; ++i) {
        Tensor a = random_unit(rng, 8), p = random_unit(rng, 8), n = random_unit(rng, 8);
        const double loss = triplet_loss(nullptr, a, p, n, margin).item();
        REQUIRE(loss >= 0.0);
        const double gap = euclid(a, p) - euclid(a, n) + margin;
        if (gap <= -1e-12) REQUIRE(loss == 0.0);
        if (gap >= 1e-12) REQUIRE(loss == Catch::Approx(gap).epsilon(1e-9));
    }
}

TEST_CASE("odd-one-out decision rule", "[teacher]") {
    SECTION("chance level on random embeddings") {
        Rng rng(77);
        int correct = 0;
        const int n = 10000;
        for (int i = 0; i < n; ++i)
            correct += odd_one_out_correct(random_unit(rng, 16), random_unit(rng, 16),
                                           random_unit(rng, 16))
                           ? 1
                           : 0;
        REQUIRE(static_cast<double>(correct) / n == Catch::Approx(1.0 / 3).margin(0.02));
    }
    SECTION("orthogonal shape clusters are perfect") {
        Tensor e1 = unit_vec({1, 0, 0}), e2 = unit_vec({0, 1, 0});
        REQUIRE(odd_one_out_correct(e1, e1, e2));
    }
    SECTION("ties count as incorrect") {
        Tensor a = Tensor({1, 2}, {0, 0});
        Tensor p = Tensor({1, 2}, {1, 0});
        Tensor n = Tensor({1, 2}, {-1, 0});  // d(A,P) == d(A,N)
        REQUIRE_FALSE(odd_one_out_correct(a, p, n));
    }
    SECTION("invariant under common rescaling of the embedding space") {
        Rng rng(5);
        for (int i = 0; i < 500; ++i) {
            Tensor a = random_unit(rng, 8), p = random_unit(rng, 8), n = random_unit(rng, 8);
            const bool base = odd_one_out_correct(a, p, n);
            const double c = rng.uniform(0.1, 10.0);
            Tensor as = a, ps = p, ns = n;
            for (auto* t : {&as, &ps, &ns})
                for (double& v : t->data) v *= c;
            REQUIRE(odd_one_out_correct(as, ps, ns) == base);
        }
    }
    SECTION("empty triplet set is an error") {
        EmbeddingNet net = EmbeddingNet::create({kImageFeatures, 16, 8}, Activation::tanh_act, 1);
        std::vector<Triplet> none;
        REQUIRE_ERR(odd_one_out_accuracy(net, none, [](int) -> const Tensor& {
                        static Tensor t({3, 32, 32});
                        return t;
                    }),
                    Err::EmptyTripletSet);
    }
}

TEST_CASE("embedding normalization and collapse", "[teacher]") {
    EmbeddingNet net =
        EmbeddingNet::create({kImageFeatures, 64, kEmbeddingDim}, Activation::tanh_act, 3);
    Rng rng(9);
    SECTION("unit norm within 1e-6 on random inputs") {
        for (int i = 0; i < 20; ++i) {
            Tensor img({3, 32, 32});
            for (double& v : img.data) v = rng.uniform();
            Tensor e = embed(nullptr, net, img);
            double n2 = 0;
            for (double v : e.data) n2 += v * v;
            REQUIRE(std::sqrt(n2) == Catch::Approx(1.0).margin(1e-6));
        }
    }
    SECTION("embed is deterministic") {
        Tensor img({3, 32, 32});
        for (double& v : img.data) v = rng.uniform();
        Tensor e1 = embed(nullptr, net, img);
        Tensor e2 = embed(nullptr, net, img);
        REQUIRE(e1.data == e2.data);
    }
    SECTION("zero final layer collapses all embeddings") {
        EmbeddingNet z = net;
        for (double& v : z.params.get("net.w1").data) v = 0.0;
        for (double& v : z.params.get("net.b1").data) v = 0.0;
        Tensor img1({3, 32, 32}), img2({3, 32, 32});
        for (double& v : img1.data) v = rng.uniform();
        for (double& v : img2.data) v = rng.uniform();
        REQUIRE(embed(nullptr, z, img1).data == embed(nullptr, z, img2).data);
    }
    SECTION("non-finite pixels rejected") {
        Tensor img({3, 32, 32});
        img.data[5] = std::nan("");
        REQUIRE_ERR(embed(nullptr, net, img), Err::NonFinite);
    }
}

TEST_CASE("embedding distance gradient matches finite differences", "[teacher]") {
    EmbeddingNet net = EmbeddingNet::create({kImageFeatures, 32, 16}, Activation::tanh_act, 21);
    Rng rng(13);
    Tensor img({1, kImageFeatures});
    for (double& v : img.data) v = rng.uniform(0.05, 0.95);
    Tensor target({3, 32, 32});
    for (double& v : target.data) v = rng.uniform();
    const Tensor te = embed(nullptr, net, target);

    auto fn = [&](Tape* tp, std::vector<Tensor>& xs) {
        Tensor e = embed_batch(tp, net, xs[0]);
        return sum(tp, square(tp, sub(tp, e, te)));
    };
    Rng dirs(99);
    const double err = fdtest::check_directional(fn, {img}, 120, dirs);
    REQUIRE(err < 1e-3);
}

TEST_CASE("hpe distance identities", "[teacher]") {
    EmbeddingNet net =
        EmbeddingNet::create({kImageFeatures, 64, kEmbeddingDim}, Activation::tanh_act, 4);
    Rng rng(12);
    Tensor a({3, 32, 32}), b({3, 32, 32});
    for (double& v : a.data) v = rng.uniform();
    for (double& v : b.data) v = rng.uniform();

    REQUIRE(hpe_distance(net, a, a) == 0.0);
    REQUIRE(hpe_distance(net, a, b) == Catch::Approx(hpe_distance(net, b, a)));
    for (int i = 0; i < 25; ++i) {
        Tensor c({3, 32, 32}), d({3, 32, 32});
        for (double& v : c.data) v = rng.uniform();
        for (double& v : d.data) v = rng.uniform();
        const double dist = hpe_distance(net, c, d);
        REQUIRE(dist >= 0.0);
        REQUIRE(dist <= 4.0);  // ||u - v||^2 <= 4 on the unit sphere
    }
}

TEST_CASE("teacher training learns shape structure", "[teacher][train]") {
    World w = make_world(120, 41, "train");
    TeacherTrainConfig cfg;
    cfg.epochs = 5;
    cfg.triplets_per_epoch = 192;
    cfg.batch_size = 48;
    cfg.seed = 7;

    SECTION("0 epochs returns the initialized net with a near-chance score") {
        TeacherTrainConfig zero = cfg;
        zero.epochs = 0;
        auto res = train_teacher(w.manifest, w.images, zero);
        REQUIRE(res.curve.empty());
    }
    SECTION("loss curve moves and training is deterministic") {
        auto r1 = train_teacher(w.manifest, w.images, cfg);
        REQUIRE(r1.curve.size() == 5);
        for (size_t i = 0; i < r1.curve.size(); ++i)
            REQUIRE(r1.curve[i].epoch == static_cast<int>(i));
        REQUIRE(r1.curve.back().train_loss < r1.curve.front().train_loss);
        REQUIRE(r1.final_val_acc > 0.5);  // well above the 1/3 chance floor

        auto r2 = train_teacher(w.manifest, w.images, cfg);
        REQUIRE(r1.net.params.to_bytes() == r2.net.params.to_bytes());
        for (size_t i = 0; i < r1.curve.size(); ++i) {
            REQUIRE(r1.curve[i].train_loss == r2.curve[i].train_loss);
            REQUIRE(r1.curve[i].val_loss == r2.curve[i].val_loss);
            REQUIRE(r1.curve[i].val_acc == r2.curve[i].val_acc);
        }
    }
    SECTION("gradient flows through hpe distance for a trained net") {
        auto res = train_teacher(w.manifest, w.images, cfg);
        Tape tape;
        Tensor img = w.images[0];
        img.requires_grad = true;
        tape.watch(img);
        Tensor e = embed(&tape, res.net, img);
        Tensor et = embed(nullptr, res.net, w.images[5]);
        Tensor dist = sum(&tape, square(&tape, sub(&tape, e, et)));
        tape.backward(dist);
        const Tensor* g = tape.grad(img);
        REQUIRE(g != nullptr);
        double norm = 0;
        for (double v : g->data) norm += v * v;
        REQUIRE(std::sqrt(norm) > 0.0);
    }
}

TEST_CASE("texture baseline trains on texture labels", "[teacher][train]") {
    World w = make_world(120, 43, "baseline");
    TeacherTrainConfig cfg;
    cfg.epochs = 25;
    cfg.triplets_per_epoch = 256;  // sample budget per epoch
    cfg.batch_size = 64;
    cfg.seed = 17;
    cfg.lr = 5e-4;
    auto res = train_texture_baseline(w.manifest, w.images, cfg);
    REQUIRE(res.curve.size() == 25);
    REQUIRE(res.final_texture_acc > 0.35);        // 5 classes, chance 0.2
    REQUIRE(res.curve.back().train_loss < res.curve.front().train_loss);

    auto res2 = train_texture_baseline(w.manifest, w.images, cfg);
    REQUIRE(res.net.params.to_bytes() == res2.net.params.to_bytes());
}

TEST_CASE("external csv evaluation matches in-memory evaluation", "[teacher]") {
    World w = make_world(60, 47, "roundtrip");
    EmbeddingNet net =
        EmbeddingNet::create({kImageFeatures, 64, kEmbeddingDim}, Activation::tanh_act, 8);

    auto dir = fresh_dir("roundtrip_csv");
    export_triplets_csv(w.manifest, Split::train, dir / "triplets.csv");
    auto ext = load_external_triplets(dir / "triplets.csv");
    REQUIRE(ext.triplets.size() == w.manifest.train_triplets.size());

    const double mem_acc = odd_one_out_accuracy(net, w.manifest.train_triplets,
                                                [&](int id) -> const Tensor& {
                                                    return w.images[static_cast<size_t>(id)];
                                                });
    const double csv_acc = odd_one_out_accuracy(net, ext.triplets, [&](int id) -> const Tensor& {
        return ext.images[static_cast<size_t>(id)];
    });
    REQUIRE(csv_acc == Catch::Approx(mem_acc).margin(1e-6));
}
