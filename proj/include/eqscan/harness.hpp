#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "eqscan/network.hpp"

namespace eqscan {

// Normalized mean squared error: ||pred - ref||^2 / ||ref||^2.
template <typename S>
double nmse(const Ten<S>& pred, const Ten<S>& ref) {
    if (pred.dims != ref.dims)
        throw ShapeError("nmse: shape mismatch " + dims_str(pred.dims) + " vs " + dims_str(ref.dims));
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < ref.data.size(); ++i) {
        const double d = double(pred.data[i]) - double(ref.data[i]);
        num += d * d;
        den += double(ref.data[i]) * double(ref.data[i]);
    }
    if (den == 0.0) throw DomainError("nmse: reference has zero norm");
    return num / den;
}

enum class ReportLevel { feature, logits };

inline const char* report_level_name(ReportLevel l) {
    return l == ReportLevel::feature ? "feature" : "logits";
}

struct NmseReport {
    std::array<double, 4> per_rotation{};  // indexed by t; t=0 is structurally 0
    double mean = 0.0;                     // over t in {1,2,3}, or {0..3} with include_identity
    bool include_identity = false;
    std::string model_id;
    std::string dtype;
    std::string level;
    int64_t sample_count = 0;
};

// Images are carried in f64 and cast at the model boundary; labels are i64.
struct ToyDataset {
    Ten<double> images;  // (n, H, W, C), values in [0, 1]
    Ten<int64_t> labels; // (n)
    std::string provenance;

    int64_t size() const { return images.dim(0); }
};

ToyDataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const std::string& images_path, const std::string& labels_path, const ToyDataset& ds);

// Oriented glyphs (L, T, arrow, bar) rendered at the canonical orientation
// with positional jitter; classes are told apart by shape, orientation is the
// nuisance the rotated split introduces.
ToyDataset synth_shapes(uint64_t seed, int64_t n, int64_t classes);

// Every image under all four rotations, labels kept.
ToyDataset rotated_split(const ToyDataset& ds);

// Honors EQSCAN_THREADS (and force_serial) before parallel sections.
void apply_thread_env(bool force_serial = false);

namespace harness_detail {

template <typename S>
Ten<S> sample_image(const ToyDataset& ds, int64_t i) {
    const int64_t h = ds.images.dim(1), w = ds.images.dim(2), c = ds.images.dim(3);
    Ten<S> out({h, w, c});
    const double* src = ds.images.data.data() + i * h * w * c;
    for (int64_t k = 0; k < h * w * c; ++k) out.data[size_t(k)] = S(src[k]);
    return out;
}

}  // namespace harness_detail

// Per-sample NMSE between the model applied to the rotated input and the
// correspondingly transformed reference output, averaged over the dataset.
// Feature level compares backbone outputs under the joint transform (plain
// rotation for the baseline, which carries no group axis); logit level uses
// invariance. Aggregation is ordered, so reports are bit-reproducible.
template <typename S>
NmseReport equivariance_report(const Model<S>& m, const ToyDataset& ds, ReportLevel level,
                               bool include_identity = false, const std::string& model_id = "") {
    const int64_t n = ds.size();
    if (n < 1) throw ValueError("equivariance_report: empty dataset");
    std::vector<std::array<double, 4>> per_sample(static_cast<size_t>(n));
    std::string first_error;

#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < n; ++i) {
        try {
            Ten<S> img = harness_detail::sample_image<S>(ds, i);
            if (level == ReportLevel::feature) {
                Ten<S> ref = model_features(m, img);
                for (int t = 0; t < 4; ++t) {
                    Ten<S> pred = model_features(m, rotate_spatial(img, t));
                    Ten<S> moved = m.spec.equivariant ? rotate_and_cycle(ref, t) : rotate_spatial(ref, t);
                    per_sample[size_t(i)][size_t(t)] = nmse(pred, moved);
                }
            } else {
                Ten<S> ref = model_logits(m, img);
                for (int t = 0; t < 4; ++t)
                    per_sample[size_t(i)][size_t(t)] = nmse(model_logits(m, rotate_spatial(img, t)), ref);
            }
        } catch (const std::exception& e) {
#pragma omp critical
            if (first_error.empty()) first_error = "sample " + std::to_string(i) + ": " + e.what();
        }
    }
    if (!first_error.empty()) throw ShapeError("equivariance_report: " + first_error);

    NmseReport report;
    report.include_identity = include_identity;
    report.model_id = model_id;
    report.dtype = dtype_name(dtype_of<S>());
    report.level = report_level_name(level);
    report.sample_count = n;
    for (int t = 0; t < 4; ++t) {
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) acc += per_sample[size_t(i)][size_t(t)];
        report.per_rotation[size_t(t)] = acc / double(n);
    }
    double mean = 0.0;
    int count = 0;
    for (int t = include_identity ? 0 : 1; t < 4; ++t) {
        mean += report.per_rotation[size_t(t)];
        ++count;
    }
    report.mean = mean / double(count);
    return report;
}

template <typename S>
int64_t predict(const Model<S>& m, const Ten<S>& img) {
    Ten<S> logits = model_logits(m, img);
    int64_t arg = 0;
    for (int64_t k = 1; k < logits.numel(); ++k)
        if (logits.data[size_t(k)] > logits.data[size_t(arg)]) arg = k;
    return arg;
}

template <typename S>
double accuracy(const Model<S>& m, const ToyDataset& ds) {
    const int64_t n = ds.size();
    std::vector<char> hit(static_cast<size_t>(n), 0);
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < n; ++i)
        hit[size_t(i)] = predict(m, harness_detail::sample_image<S>(ds, i)) == ds.labels.data[size_t(i)];
    int64_t correct = 0;
    for (char h : hit) correct += h;
    return double(correct) / double(n);
}

struct EpochMetrics {
    double loss = 0.0;
    double train_accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> epochs;
};

// Minibatch SGD with cross-entropy. Per-sample gradients are computed in
// parallel into per-sample slots and reduced in sample order, so the whole
// trajectory is bit-reproducible for a given seed regardless of threading.
template <typename S>
TrainResult train_toy(Model<S>& m, const ToyDataset& ds, int64_t epochs, double lr, uint64_t seed,
                      double weight_decay = 0.0, int64_t batch_size = 16) {
    const int64_t n = ds.size();
    if (n < 1) throw ValueError("train_toy: empty dataset");
    Rng shuffle_rng(seed ^ 0x9e3779b97f4a7c15ull);
    TrainResult result;
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[size_t(i)] = i;

    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
        for (int64_t i = n - 1; i > 0; --i)
            std::swap(order[size_t(i)], order[size_t(shuffle_rng.integer(0, i))]);
        double epoch_loss = 0.0;
        for (int64_t start = 0; start < n; start += batch_size) {
            const int64_t bsz = std::min(batch_size, n - start);
            std::vector<std::map<std::string, Ten<S>>> slot_grads(static_cast<size_t>(bsz));
            std::vector<double> slot_loss(static_cast<size_t>(bsz));
            std::string first_error;
#pragma omp parallel for schedule(dynamic)
            for (int64_t k = 0; k < bsz; ++k) {
                try {
                    const int64_t idx = order[size_t(start + k)];
                    Tape<S> tp;
                    auto bound = bind_model(m, tp);
                    int img = tp.leaf(harness_detail::sample_image<S>(ds, idx));
                    int logits = forward_logits(bound, forward_features(bound, img));
                    int loss = ops::ce_loss(tp, logits, ds.labels.data[size_t(idx)]);
                    slot_loss[size_t(k)] = double(tp.val(loss).data[0]);
                    tp.backward(loss, Ten<S>({1}, {S(1)}));
                    slot_grads[size_t(k)] = tp.named_grads();
                } catch (const std::exception& e) {
#pragma omp critical
                    if (first_error.empty())
                        first_error = "sample " + std::to_string(order[size_t(start + k)]) + ": " + e.what();
                }
            }
            if (!first_error.empty()) throw ValueError("train_toy: " + first_error);
            std::map<std::string, Ten<S>> grads;
            for (int64_t k = 0; k < bsz; ++k) {
                for (auto& [name, g] : slot_grads[size_t(k)]) {
                    auto [it, fresh] = grads.try_emplace(name, Ten<S>(g.dims));
                    for (size_t j = 0; j < g.data.size(); ++j) it->second.data[j] += g.data[j];
                }
                epoch_loss += slot_loss[size_t(k)];
            }
            for (auto& [name, g] : grads)
                for (auto& v : g.data) v = S(double(v) / double(bsz));
            sgd_step(m.params, grads, lr, weight_decay);
        }
        EpochMetrics em;
        em.loss = epoch_loss / double(n);
        if (!std::isfinite(em.loss))
            throw DomainError("train_toy: loss diverged at epoch " + std::to_string(epoch));
        em.train_accuracy = accuracy(m, ds);
        result.epochs.push_back(em);
    }
    return result;
}

}  // namespace eqscan
