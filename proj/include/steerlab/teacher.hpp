#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <vector>

#include "steerlab/mlp.hpp"
#include "steerlab/optim.hpp"
#include "steerlab/shapeworld.hpp"
#include "steerlab/tape.hpp"

namespace steerlab {

constexpr int kImageFeatures = 3 * kImageSize * kImageSize;  // 3072
constexpr int kEmbeddingDim = 32;

// Shape-sensitive embedding teacher. A small tanh MLP over flattened pixels
// with the output projected onto the unit sphere; distance in this space is
// the guidance signal everything downstream consumes.
struct EmbeddingNet {
    std::vector<int> widths{kImageFeatures, 256, 128, kEmbeddingDim};
    Activation act = Activation::tanh_act;
    bool activate_final = false;  // texture baseline embeds the activated penultimate
    ParamSet params;

    static EmbeddingNet create(std::vector<int> widths, Activation act, uint64_t seed,
                               bool activate_final = false) {
        EmbeddingNet net;
        net.widths = std::move(widths);
        net.act = act;
        net.activate_final = activate_final;
        Rng rng(hash_combine(seed, 0xe3b));
        init_mlp(net.params, "net", net.widths, rng);
        return net;
    }

    int embedding_dim() const { return widths.back(); }
};

// pixels arrive in [0,1]; all nets consume them centered on the background
inline Tensor center_pixels(Tape* tp, const Tensor& batch) {
    return sub(tp, batch, Tensor::scalar(kBackgroundGray));
}

// batch of flattened images [B x 3072] -> unit-row embeddings [B x dim]
inline Tensor embed_batch(Tape* tp, EmbeddingNet& net, const Tensor& batch) {
    require(batch.rank() == 2 && batch.shape[1] == net.widths.front(), Err::ShapeMismatch,
            "embed_batch expects [B x " + std::to_string(net.widths.front()) + "]");
    Tensor h = mlp_forward(tp, net.params, "net", center_pixels(tp, batch), net.act);
    if (net.activate_final)
        h = net.act == Activation::tanh_act ? steerlab::tanh(tp, h) : relu(tp, h);
    return l2norm(tp, h);
}

// single image [3,32,32] (or already-flat [1 x 3072]) -> [1 x dim]
inline Tensor embed(Tape* tp, EmbeddingNet& net, const Tensor& image) {
    require(image.all_finite(), Err::NonFinite, "embed input has non-finite pixels");
    Tensor flat = image.rank() == 2 ? image : reshape(tp, image, {1, kImageFeatures});
    return embed_batch(tp, net, flat);
}

// ---------------------------------------------------------------------------
// Triplet margin loss: max(0, d(A,P) - d(A,N) + margin), d Euclidean.
// ---------------------------------------------------------------------------

inline Tensor pairwise_distance(Tape* tp, const Tensor& a, const Tensor& b) {
    return steerlab::sqrt(tp, sum(tp, square(tp, sub(tp, a, b)), 1));  // [B x 1]
}

// a, p, n: [B x dim] (or [1 x dim]); returns the scalar mean loss over rows
inline Tensor triplet_loss(Tape* tp, const Tensor& a, const Tensor& p, const Tensor& n,
                           double margin) {
    require(margin > 0.0, Err::ConfigInvalid, "triplet margin must be positive");
    Tensor d_ap = pairwise_distance(tp, a, p);
    Tensor d_an = pairwise_distance(tp, a, n);
    Tensor rows = relu(tp, add(tp, sub(tp, d_ap, d_an), Tensor::scalar(margin)));
    return mean(tp, rows);
}

// squared Euclidean distance between the unit embeddings of two images;
// symmetric, zero for identical inputs, bounded by 4 on the unit sphere
inline double hpe_distance(EmbeddingNet& net, const Tensor& image_a, const Tensor& image_b) {
    Tensor ea = embed(nullptr, net, image_a);
    Tensor eb = embed(nullptr, net, image_b);
    double s = 0.0;
    for (size_t i = 0; i < ea.numel(); ++i) {
        const double d = ea.data[i] - eb.data[i];
        s += d * d;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Odd-one-out evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    double accuracy = 0.0;
    double mean_d_ap = 0.0;  // Euclidean, not squared
    double mean_d_an = 0.0;
    int n_triplets = 0;
    // (anchor shape, negative shape) -> {correct, total}; empty for external data
    std::map<std::string, std::pair<int, int>> pair_counts;
};

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["triplet_accuracy"] = r.accuracy;
    j["mean_d_ap"] = r.mean_d_ap;
    j["mean_d_an"] = r.mean_d_an;
    j["n_triplets"] = r.n_triplets;
    nlohmann::json pairs = nlohmann::json::object();
    for (const auto& [key, ct] : r.pair_counts)
        pairs[key] = {{"correct", ct.first}, {"total", ct.second}};
    j["shape_pair_counts"] = std::move(pairs);
    return j;
}

namespace detail {

inline double sq_dist(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s;
}

}  // namespace detail

// Decision rule: the negative is the odd one out iff it is strictly farther
// from both anchor and positive than they are from each other, i.e.
// d(A,N) > d(A,P) and d(P,N) > d(A,P). Ties count as incorrect. Under random
// embeddings exactly one of the three pairs is closest, so chance is 1/3.
inline bool odd_one_out_correct(const Tensor& ea, const Tensor& ep, const Tensor& en) {
    const double d_ap = detail::sq_dist(ea, ep);
    const double d_an = detail::sq_dist(ea, en);
    const double d_pn = detail::sq_dist(ep, en);
    return d_an > d_ap && d_pn > d_ap;
}

// `images` maps an image id to its [3,32,32] tensor; `labels` optionally maps
// an id to its shape tag for the per-pair accuracy matrix.
inline EvalReport evaluate_triplets(EmbeddingNet& net, const std::vector<Triplet>& triplets,
                                    const std::function<const Tensor&(int)>& images,
                                    const std::function<std::string(int)>* labels = nullptr) {
    require(!triplets.empty(), Err::EmptyTripletSet, "no triplets to evaluate");
    std::map<int, Tensor> cache;
    auto embed_id = [&](int id) -> const Tensor& {
        auto it = cache.find(id);
        if (it == cache.end()) it = cache.emplace(id, embed(nullptr, net, images(id))).first;
        return it->second;
    };

    EvalReport rep;
    rep.n_triplets = static_cast<int>(triplets.size());
    int correct = 0;
    double sum_ap = 0.0, sum_an = 0.0;
    for (const Triplet& t : triplets) {
        const Tensor& ea = embed_id(t.anchor);
        const Tensor& ep = embed_id(t.positive);
        const Tensor& en = embed_id(t.negative);
        const bool ok = odd_one_out_correct(ea, ep, en);
        correct += ok ? 1 : 0;
        sum_ap += std::sqrt(detail::sq_dist(ea, ep));
        sum_an += std::sqrt(detail::sq_dist(ea, en));
        if (labels) {
            auto& slot = rep.pair_counts[(*labels)(t.anchor) + "->" + (*labels)(t.negative)];
            slot.first += ok ? 1 : 0;
            slot.second += 1;
        }
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(triplets.size());
    rep.mean_d_ap = sum_ap / static_cast<double>(triplets.size());
    rep.mean_d_an = sum_an / static_cast<double>(triplets.size());
    return rep;
}

inline double odd_one_out_accuracy(EmbeddingNet& net, const std::vector<Triplet>& triplets,
                                   const std::function<const Tensor&(int)>& images) {
    return evaluate_triplets(net, triplets, images).accuracy;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TeacherTrainConfig {
    double margin = 0.2;
    double lr = 1e-3;
    int epochs = 30;
    int batch_size = 64;
    int triplets_per_epoch = 512;
    uint64_t seed = 7;
};

struct LossRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TeacherTrainResult {
    EmbeddingNet net;
    std::vector<LossRow> curve;
    double final_val_acc = 0.0;
};

// stack image tensors as rows of a [N x 3072] matrix
inline Tensor gather_images(const std::vector<Tensor>& images, const std::vector<int>& ids) {
    Tensor out({static_cast<int>(ids.size()), kImageFeatures});
    for (size_t r = 0; r < ids.size(); ++r) {
        const Tensor& img = images[static_cast<size_t>(ids[r])];
        std::copy(img.data.begin(), img.data.end(), out.data.begin() + static_cast<long>(r) * kImageFeatures);
    }
    return out;
}

namespace detail {

struct TripletBatch {
    Tensor a, p, n;  // each [B x 3072]
};

inline TripletBatch gather_triplets(const std::vector<Tensor>& images,
                                    const std::vector<Triplet>& ts, size_t begin, size_t end) {
    std::vector<int> ia, ip, in;
    for (size_t i = begin; i < end; ++i) {
        ia.push_back(ts[i].anchor);
        ip.push_back(ts[i].positive);
        in.push_back(ts[i].negative);
    }
    return {gather_images(images, ia), gather_images(images, ip), gather_images(images, in)};
}

inline double mean_triplet_loss_eval(EmbeddingNet& net, const std::vector<Tensor>& images,
                                     const std::vector<Triplet>& ts, double margin) {
    if (ts.empty()) return 0.0;
    double total = 0.0;
    const size_t chunk = 256;
    for (size_t i = 0; i < ts.size(); i += chunk) {
        const size_t end = std::min(ts.size(), i + chunk);
        auto b = gather_triplets(images, ts, i, end);
        Tensor ea = embed_batch(nullptr, net, b.a);
        Tensor ep = embed_batch(nullptr, net, b.p);
        Tensor en = embed_batch(nullptr, net, b.n);
        total += triplet_loss(nullptr, ea, ep, en, margin).item() * static_cast<double>(end - i);
    }
    return total / static_cast<double>(ts.size());
}

}  // namespace detail

// Trains the HPE teacher with the triplet margin objective. Fresh triplets
// are sampled every epoch from the train split; validation runs on the
// manifest's fixed val triplet list. Deterministic per seed.
inline TeacherTrainResult train_teacher(const DatasetManifest& manifest,
                                        const std::vector<Tensor>& images,
                                        const TeacherTrainConfig& cfg) {
    require(cfg.margin > 0.0, Err::ConfigInvalid, "margin must be > 0");
    require(!manifest.train_ids.empty(), Err::InsufficientVariety, "empty train split");
    require(!manifest.val_triplets.empty() || cfg.epochs == 0, Err::EmptyTripletSet,
            "teacher training needs val triplets for the loss curve");

    TeacherTrainResult result;
    result.net = EmbeddingNet::create({kImageFeatures, 256, 128, kEmbeddingDim},
                                      Activation::tanh_act, cfg.seed);
    AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
    Rng epoch_rng(hash_combine(cfg.seed, 0x7e47));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng = epoch_rng.split(static_cast<uint64_t>(epoch));
        auto triplets = sample_triplets(rng, manifest, Split::train, cfg.triplets_per_epoch);
        double epoch_loss = 0.0;
        size_t batches = 0;
        for (size_t i = 0; i < triplets.size(); i += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(triplets.size(), i + static_cast<size_t>(cfg.batch_size));
            auto b = detail::gather_triplets(images, triplets, i, end);
            Tape tape;
            result.net.params.attach(tape);
            Tensor ea = embed_batch(&tape, result.net, b.a);
            Tensor ep = embed_batch(&tape, result.net, b.p);
            Tensor en = embed_batch(&tape, result.net, b.n);
            Tensor loss = triplet_loss(&tape, ea, ep, en, cfg.margin);
            tape.backward(loss);
            result.net.params.adam_step(tape, adam);
            epoch_loss += loss.item();
            ++batches;
        }
        LossRow row;
        row.epoch = epoch;
        row.train_loss = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
        row.val_loss = detail::mean_triplet_loss_eval(result.net, images, manifest.val_triplets,
                                                      cfg.margin);
        row.val_acc = evaluate_triplets(result.net, manifest.val_triplets,
                                        [&](int id) -> const Tensor& {
                                            return images[static_cast<size_t>(id)];
                                        })
                          .accuracy;
        result.curve.push_back(row);
    }
    result.final_val_acc = result.curve.empty() ? 0.0 : result.curve.back().val_acc;
    return result;
}

// ---------------------------------------------------------------------------
// Texture-classifier baseline (the texture-biased control). Cross-entropy on
// texture labels; evaluation embeds the activated penultimate layer.
// ---------------------------------------------------------------------------

struct BaselineTrainResult {
    EmbeddingNet net;          // widths {3072, 256, 128}, activate_final = true
    ParamSet head;             // classifier head 128 -> n_textures
    std::vector<LossRow> curve;  // val_acc column holds texture classification accuracy
    double final_texture_acc = 0.0;
};

namespace detail {

// cross-entropy with a detached row-max shift; exact value and gradient
inline Tensor cross_entropy(Tape* tp, const Tensor& logits, const std::vector<int>& labels) {
    const int bsz = logits.shape[0], ncls = logits.shape[1];
    Tensor shift({bsz, ncls});      // constant row-max, broadcast manually
    Tensor shift_col({bsz, 1});
    Tensor onehot({bsz, ncls});
    for (int i = 0; i < bsz; ++i) {
        double mx = logits.data[static_cast<size_t>(i) * ncls];
        for (int j = 1; j < ncls; ++j)
            mx = std::max(mx, logits.data[static_cast<size_t>(i) * ncls + j]);
        for (int j = 0; j < ncls; ++j) shift.data[static_cast<size_t>(i) * ncls + j] = mx;
        shift_col.data[static_cast<size_t>(i)] = mx;
        onehot.data[static_cast<size_t>(i) * ncls + labels[static_cast<size_t>(i)]] = 1.0;
    }
    Tensor lse = add(tp, steerlab::log(tp, sum(tp, steerlab::exp(tp, sub(tp, logits, shift)), 1)),
                     shift_col);
    Tensor zy = sum(tp, mul(tp, logits, onehot), 1);
    return mean(tp, sub(tp, lse, zy));
}

}  // namespace detail

inline BaselineTrainResult train_texture_baseline(const DatasetManifest& manifest,
                                                  const std::vector<Tensor>& images,
                                                  const TeacherTrainConfig& cfg) {
    require(!manifest.train_ids.empty(), Err::InsufficientVariety, "empty train split");
    std::set<TextureKind> texture_set;
    for (const auto& rec : manifest.images) texture_set.insert(rec.texture);
    std::vector<TextureKind> classes(texture_set.begin(), texture_set.end());
    const int ncls = static_cast<int>(classes.size());
    require(ncls >= 2, Err::InsufficientVariety, "texture baseline needs >= 2 texture classes");
    auto class_of = [&](int id) {
        const TextureKind t = manifest.images[static_cast<size_t>(id)].texture;
        return static_cast<int>(std::find(classes.begin(), classes.end(), t) - classes.begin());
    };

    BaselineTrainResult result;
    result.net = EmbeddingNet::create({kImageFeatures, 256, 128}, Activation::tanh_act, cfg.seed,
                                      /*activate_final=*/true);
    Rng head_rng(hash_combine(cfg.seed, 0xead));
    init_mlp(result.head, "head", {128, ncls}, head_rng);

    AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
    Rng epoch_rng(hash_combine(cfg.seed, 0xba5e));
    const int samples_per_epoch = cfg.triplets_per_epoch;  // reuse the same budget knob

    auto texture_accuracy = [&](const std::vector<int>& ids) {
        if (ids.empty()) return 0.0;
        int correct = 0;
        for (size_t i = 0; i < ids.size(); i += 256) {
            const size_t end = std::min(ids.size(), i + 256);
            std::vector<int> chunk(ids.begin() + static_cast<long>(i),
                                   ids.begin() + static_cast<long>(end));
            Tensor x = gather_images(images, chunk);
            Tensor h = embed_batch(nullptr, result.net, x);
            Tensor logits = mlp_forward(nullptr, result.head, "head", h, result.net.act);
            for (size_t r = 0; r < chunk.size(); ++r) {
                int argmax = 0;
                for (int j = 1; j < ncls; ++j)
                    if (logits.data[r * static_cast<size_t>(ncls) + j] >
                        logits.data[r * static_cast<size_t>(ncls) + argmax])
                        argmax = j;
                correct += argmax == class_of(chunk[r]) ? 1 : 0;
            }
        }
        return static_cast<double>(correct) / static_cast<double>(ids.size());
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng = epoch_rng.split(static_cast<uint64_t>(epoch));
        double epoch_loss = 0.0;
        size_t batches = 0;
        for (int done = 0; done < samples_per_epoch; done += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, samples_per_epoch - done);
            std::vector<int> ids;
            std::vector<int> labels;
            for (int i = 0; i < bsz; ++i) {
                int id = manifest.train_ids[rng.uniform_int(manifest.train_ids.size())];
                ids.push_back(id);
                labels.push_back(class_of(id));
            }
            Tensor x = gather_images(images, ids);
            Tape tape;
            result.net.params.attach(tape);
            result.head.attach(tape);
            Tensor h = mlp_forward(&tape, result.net.params, "net", x, result.net.act);
            h = steerlab::tanh(&tape, h);
            Tensor logits = mlp_forward(&tape, result.head, "head", h, result.net.act);
            Tensor loss = detail::cross_entropy(&tape, logits, labels);
            tape.backward(loss);
            result.net.params.adam_step(tape, adam);
            result.head.adam_step(tape, adam);
            epoch_loss += loss.item();
            ++batches;
        }
        LossRow row;
        row.epoch = epoch;
        row.train_loss = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
        row.val_loss = 0.0;
        row.val_acc = texture_accuracy(manifest.val_ids.empty() ? manifest.train_ids
                                                                : manifest.val_ids);
        result.curve.push_back(row);
    }
    result.final_texture_acc = result.curve.empty() ? 0.0 : result.curve.back().val_acc;
    return result;
}

// mean pairwise embedding distance within texture classes vs within shape
// classes, over a split; the texture-trained baseline should cluster tighter
// by texture, the teacher tighter by shape
struct ClusterStats {
    double mean_within_texture = 0.0;
    double mean_within_shape = 0.0;
};

inline ClusterStats embedding_cluster_stats(EmbeddingNet& net, const DatasetManifest& manifest,
                                            const std::vector<Tensor>& images, Split split) {
    const auto& ids = manifest.ids(split);
    std::vector<Tensor> embs;
    embs.reserve(ids.size());
    for (int id : ids) embs.push_back(embed(nullptr, net, images[static_cast<size_t>(id)]));
    double tex_sum = 0.0, shape_sum = 0.0;
    size_t tex_n = 0, shape_n = 0;
    for (size_t i = 0; i < ids.size(); ++i)
        for (size_t j = i + 1; j < ids.size(); ++j) {
            const auto& ri = manifest.images[static_cast<size_t>(ids[i])];
            const auto& rj = manifest.images[static_cast<size_t>(ids[j])];
            const double d = std::sqrt(detail::sq_dist(embs[i], embs[j]));
            if (ri.texture == rj.texture) {
                tex_sum += d;
                ++tex_n;
            }
            if (ri.shape == rj.shape) {
                shape_sum += d;
                ++shape_n;
            }
        }
    ClusterStats s;
    s.mean_within_texture = tex_n ? tex_sum / static_cast<double>(tex_n) : 0.0;
    s.mean_within_shape = shape_n ? shape_sum / static_cast<double>(shape_n) : 0.0;
    return s;
}

}  // namespace steerlab
