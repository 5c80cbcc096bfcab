#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "eqscan/autodiff.hpp"
#include "eqscan/ssm.hpp"

namespace eqscan {

struct StageSpec {
    int64_t depth = 1;
    int64_t channels = 8;

    bool operator==(const StageSpec&) const = default;
};

// Declarative model description. For the equivariant model `channels` is the
// per-slot width; the width-matched baseline uses 4x plain channels so both
// models carry the same total feature width at every layer.
struct ModelSpec {
    std::vector<StageSpec> stages;
    int64_t patch_stride = 2;
    int64_t in_channels = 1;
    int64_t hidden_state = 8;  // N
    int64_t num_classes = 4;
    bool equivariant = true;
    SsmMode ssm_mode = SsmMode::group;

    bool operator==(const ModelSpec&) const = default;
};

// Two stages, depths (2,2), per-slot channels (16,32), N=8: large enough
// that the baseline visibly lacks invariance, small enough for minute-scale
// CPU runs on 16x16 inputs.
ModelSpec micro_spec(bool equivariant = true);

std::vector<std::string> validate_spec(const ModelSpec& spec);
ModelSpec read_spec_file(const std::string& path);
void write_spec_file(const std::string& path, const ModelSpec& spec);

struct LayerShape {
    std::string name;
    int64_t h = 0, w = 0;  // spatial dims after the layer (0x0 for vectors)
};

// Layer list and output spatial dims for an input of the given size;
// independent of the equivariant flag by construction.
std::vector<LayerShape> topology(const ModelSpec& spec, int64_t h, int64_t w);

struct CountReport {
    std::vector<std::pair<std::string, int64_t>> per_layer;
    int64_t total = 0;
};

template <typename S>
struct Model {
    ModelSpec spec;
    std::map<std::string, Ten<S>> params;
};

namespace builder {

inline int64_t baseline_dt_rank(int64_t width) { return std::max<int64_t>(1, width / 16); }

template <typename S>
Ten<S> init_uniform(Rng& rng, std::vector<int64_t> dims, int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    return random_uniform<S>(rng, std::move(dims), -bound, bound);
}

template <typename S>
void add_norm(Model<S>& m, const std::string& prefix, int64_t c) {
    m.params[prefix + ".gamma"] = Ten<S>({c}, std::vector<S>(size_t(c), S(1)));
    m.params[prefix + ".beta"] = Ten<S>({c});
}

template <typename S>
void add_eq_linear(Model<S>& m, Rng& rng, const std::string& prefix, int64_t c1, int64_t c2,
                   int64_t tw) {
    m.params[prefix + ".W"] = init_uniform<S>(rng, {c1, tw, c2}, c1 * tw);
    m.params[prefix + ".b"] = Ten<S>({c2});
}

template <typename S>
void add_dense(Model<S>& m, Rng& rng, const std::string& prefix, int64_t c1, int64_t c2,
               bool bias = true) {
    m.params[prefix + ".W"] = init_uniform<S>(rng, {c1, c2}, c1);
    if (bias) m.params[prefix + ".b"] = Ten<S>({c2});
}

}  // namespace builder

// Deterministic construction: same spec and seed give bit-identical
// parameters. Weight tensors draw uniform(-1,1)/sqrt(fan_in); a_log and all
// biases start at zero, norms at identity, skip coefficients D at one.
template <typename S>
Model<S> build_model(const ModelSpec& spec, uint64_t seed) {
    {
        auto violations = validate_spec(spec);
        if (!violations.empty()) {
            std::string msg = "invalid model spec:";
            for (const auto& v : violations) msg += "\n  - " + v;
            throw ValueError(msg);
        }
    }
    Model<S> m;
    m.spec = spec;
    Rng rng(seed);
    const int64_t s = spec.patch_stride;
    const int64_t tw = spec.ssm_mode == SsmMode::group ? 4 : 1;
    const int64_t n = spec.hidden_state;

    if (spec.equivariant) {
        const int64_t c0 = spec.stages[0].channels;
        m.params["embed.conv"] = builder::init_uniform<S>(rng, {s, s, spec.in_channels, c0},
                                                          s * s * spec.in_channels);
        builder::add_norm(m, "embed.norm", c0);
        for (size_t i = 0; i < spec.stages.size(); ++i) {
            const int64_t c = spec.stages[i].channels;
            for (int64_t j = 0; j < spec.stages[i].depth; ++j) {
                const std::string p = "stage" + std::to_string(i) + ".block" + std::to_string(j);
                builder::add_norm(m, p + ".ln1", c);
                builder::add_eq_linear(m, rng, p + ".in", c, c, 4);
                builder::add_eq_linear(m, rng, p + ".gate", c, c, 4);
                m.params[p + ".dw.base"] = builder::init_uniform<S>(rng, {3, 3, 4, c}, 3 * 3 * 4);
                m.params[p + ".dw.bias"] = Ten<S>({c});
                builder::add_eq_linear(m, rng, p + ".ssm.wd", c, c, tw);
                builder::add_eq_linear(m, rng, p + ".ssm.wb", c, n, tw);
                builder::add_eq_linear(m, rng, p + ".ssm.wc", c, n, tw);
                m.params[p + ".ssm.a_log"] = Ten<S>({c, n});
                m.params[p + ".ssm.D"] = Ten<S>({c}, std::vector<S>(size_t(c), S(1)));
                builder::add_norm(m, p + ".ln2", c);
                builder::add_eq_linear(m, rng, p + ".out", c, c, 4);
            }
            if (i + 1 < spec.stages.size()) {
                const int64_t c2 = spec.stages[i + 1].channels;
                const std::string p = "down" + std::to_string(i);
                m.params[p + ".conv"] = builder::init_uniform<S>(rng, {2, 2, c, 4, c2}, 2 * 2 * c * 4);
                builder::add_norm(m, p + ".norm", c2);
            }
        }
        const int64_t clast = spec.stages.back().channels;
        builder::add_eq_linear(m, rng, "head", clast, spec.num_classes, 4);
    } else {
        const int64_t w0 = 4 * spec.stages[0].channels;
        m.params["embed.conv"] = builder::init_uniform<S>(rng, {s, s, spec.in_channels, w0},
                                                          s * s * spec.in_channels);
        builder::add_norm(m, "embed.norm", w0);
        for (size_t i = 0; i < spec.stages.size(); ++i) {
            const int64_t wd = 4 * spec.stages[i].channels;
            const int64_t r = builder::baseline_dt_rank(wd);
            for (int64_t j = 0; j < spec.stages[i].depth; ++j) {
                const std::string p = "stage" + std::to_string(i) + ".block" + std::to_string(j);
                builder::add_norm(m, p + ".ln1", wd);
                builder::add_dense(m, rng, p + ".in", wd, wd);
                builder::add_dense(m, rng, p + ".gate", wd, wd);
                m.params[p + ".dw.w"] = builder::init_uniform<S>(rng, {3, 3, wd}, 3 * 3);
                m.params[p + ".dw.bias"] = Ten<S>({wd});
                for (int d = 0; d < 4; ++d) {
                    const std::string q = p + ".ssm.d" + std::to_string(d);
                    builder::add_dense(m, rng, q + ".xproj", wd, r + 2 * n, /*bias=*/false);
                    builder::add_dense(m, rng, q + ".dt", r, wd);
                    m.params[q + ".a_log"] = Ten<S>({wd, n});
                }
                m.params[p + ".ssm.D"] = Ten<S>({wd, 4}, std::vector<S>(size_t(wd * 4), S(1)));
                builder::add_norm(m, p + ".ln2", wd);
                builder::add_dense(m, rng, p + ".out", wd, wd);
            }
            if (i + 1 < spec.stages.size()) {
                const int64_t w2 = 4 * spec.stages[i + 1].channels;
                const std::string p = "down" + std::to_string(i);
                m.params[p + ".conv"] = builder::init_uniform<S>(rng, {2, 2, wd, w2}, 2 * 2 * wd);
                builder::add_norm(m, p + ".norm", w2);
            }
        }
        const int64_t wlast = 4 * spec.stages.back().channels;
        builder::add_dense(m, rng, "head", wlast, spec.num_classes);
    }
    return m;
}

// --- forward -----------------------------------------------------------------

template <typename S>
struct BoundModel {
    const Model<S>* model = nullptr;
    Tape<S>* tape = nullptr;
    std::map<std::string, int> ids;

    int id(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) throw ValueError("missing parameter: " + name);
        return it->second;
    }
};

template <typename S>
BoundModel<S> bind_model(const Model<S>& m, Tape<S>& tape) {
    BoundModel<S> b;
    b.model = &m;
    b.tape = &tape;
    for (const auto& [name, value] : m.params) b.ids[name] = tape.leaf(value, name);
    return b;
}

namespace fwd_detail {

template <typename S>
int eq_vss_block(BoundModel<S>& b, int x, const std::string& p) {
    Tape<S>& tp = *b.tape;
    const int64_t h = tp.val(x).dim(0), w = tp.val(x).dim(1);
    int hn = ops::norm_channel_op(tp, x, b.id(p + ".ln1.gamma"), b.id(p + ".ln1.beta"));
    int zin = ops::eq_linear_op(tp, hn, b.id(p + ".in.W"), b.id(p + ".in.b"));
    int gate = ops::eq_linear_op(tp, hn, b.id(p + ".gate.W"), b.id(p + ".gate.b"));
    int m = ops::conv_group(tp, zin, b.id(p + ".dw.base"), b.id(p + ".dw.bias"), 1, 1, true);
    m = ops::silu_op(tp, m);

    int delta2d = ops::eq_linear_op(tp, m, b.id(p + ".ssm.wd.W"), b.id(p + ".ssm.wd.b"));
    delta2d = ops::softplus_op(tp, delta2d);
    int delta = ops::scan_eq_op(tp, delta2d);
    int a = ops::a_from_delta(tp, delta, b.id(p + ".ssm.a_log"));
    int bseq = ops::scan_eq_op(tp, ops::eq_linear_op(tp, m, b.id(p + ".ssm.wb.W"), b.id(p + ".ssm.wb.b")));
    int cseq = ops::scan_eq_op(tp, ops::eq_linear_op(tp, m, b.id(p + ".ssm.wc.W"), b.id(p + ".ssm.wc.b")));
    int xseq = ops::scan_eq_op(tp, m);
    int yseq = ops::sscan_op(tp, xseq, a, bseq, cseq, b.id(p + ".ssm.D"), false);
    int y = ops::merge_eq_op(tp, yseq, h, w);

    y = ops::norm_channel_op(tp, y, b.id(p + ".ln2.gamma"), b.id(p + ".ln2.beta"));
    y = ops::mul(tp, y, ops::silu_op(tp, gate));
    y = ops::eq_linear_op(tp, y, b.id(p + ".out.W"), b.id(p + ".out.b"));
    return ops::add(tp, y, x);
}

template <typename S>
int baseline_vss_block(BoundModel<S>& b, int x, const std::string& p, int64_t n) {
    Tape<S>& tp = *b.tape;
    const int64_t h = tp.val(x).dim(0), w = tp.val(x).dim(1);
    const int64_t wd = tp.val(x).dim(2);
    const int64_t r = builder::baseline_dt_rank(wd);
    int hn = ops::norm_channel_op(tp, x, b.id(p + ".ln1.gamma"), b.id(p + ".ln1.beta"));
    int zin = ops::dense_op(tp, hn, b.id(p + ".in.W"), b.id(p + ".in.b"));
    int gate = ops::dense_op(tp, hn, b.id(p + ".gate.W"), b.id(p + ".gate.b"));
    int m = ops::conv_dw_plain(tp, zin, b.id(p + ".dw.w"), b.id(p + ".dw.bias"), 1, 1);
    m = ops::silu_op(tp, m);

    std::array<int, 4> as{}, bs{}, cs{}, xs{};
    for (int d = 0; d < 4; ++d) {
        const std::string q = p + ".ssm.d" + std::to_string(d);
        int xp = ops::dense_op(tp, m, b.id(q + ".xproj.W"), -1);
        int dt_low = ops::slice_last(tp, xp, 0, r);
        int b2d = ops::slice_last(tp, xp, r, r + n);
        int c2d = ops::slice_last(tp, xp, r + n, r + 2 * n);
        int delta2d = ops::softplus_op(tp, ops::dense_op(tp, dt_low, b.id(q + ".dt.W"), b.id(q + ".dt.b")));
        int delta = ops::scan_dir_op(tp, delta2d, d);
        as[size_t(d)] = ops::a_from_delta(tp, delta, b.id(q + ".a_log"));
        bs[size_t(d)] = ops::scan_dir_op(tp, b2d, d);
        cs[size_t(d)] = ops::scan_dir_op(tp, c2d, d);
        xs[size_t(d)] = ops::scan_dir_op(tp, m, d);
    }
    int a = ops::stack_slots(tp, as);
    int bseq = ops::stack_slots(tp, bs);
    int cseq = ops::stack_slots(tp, cs);
    int xseq = ops::stack_slots(tp, xs);
    int yseq = ops::sscan_op(tp, xseq, a, bseq, cseq, b.id(p + ".ssm.D"), true);
    int y = ops::merge_base_op(tp, yseq, h, w);

    y = ops::norm_channel_op(tp, y, b.id(p + ".ln2.gamma"), b.id(p + ".ln2.beta"));
    y = ops::mul(tp, y, ops::silu_op(tp, gate));
    y = ops::dense_op(tp, y, b.id(p + ".out.W"), b.id(p + ".out.b"));
    return ops::add(tp, y, x);
}

}  // namespace fwd_detail

// Backbone: patch embed, stages of VSS blocks with downsampling between
// stages. Returns the pre-head feature map id.
template <typename S>
int forward_features(BoundModel<S>& b, int img) {
    Tape<S>& tp = *b.tape;
    const ModelSpec& spec = b.model->spec;
    const Ten<S>& iv = tp.val(img);
    if (iv.rank() != 3 || iv.dim(2) != spec.in_channels)
        throw ShapeError("model expects (H,W," + std::to_string(spec.in_channels) + "), got " +
                         dims_str(iv.dims));
    if (iv.dim(0) % spec.patch_stride != 0 || iv.dim(1) % spec.patch_stride != 0)
        throw ShapeError("input dims must be divisible by the patch stride (pad the input)");

    int x;
    if (spec.equivariant) {
        x = ops::conv_lift(tp, img, b.id("embed.conv"), -1, spec.patch_stride, 0);
    } else {
        x = ops::conv_plain(tp, img, b.id("embed.conv"), -1, spec.patch_stride, 0);
    }
    x = ops::norm_channel_op(tp, x, b.id("embed.norm.gamma"), b.id("embed.norm.beta"));
    for (size_t i = 0; i < spec.stages.size(); ++i) {
        for (int64_t j = 0; j < spec.stages[i].depth; ++j) {
            const std::string p = "stage" + std::to_string(i) + ".block" + std::to_string(j);
            x = spec.equivariant ? fwd_detail::eq_vss_block(b, x, p)
                                 : fwd_detail::baseline_vss_block(b, x, p, spec.hidden_state);
        }
        if (i + 1 < spec.stages.size()) {
            const std::string p = "down" + std::to_string(i);
            if (tp.val(x).dim(0) % 2 != 0 || tp.val(x).dim(1) % 2 != 0)
                throw ShapeError("downsample requires even spatial dims");
            x = spec.equivariant ? ops::conv_group(tp, x, b.id(p + ".conv"), -1, 2, 0, false)
                                 : ops::conv_plain(tp, x, b.id(p + ".conv"), -1, 2, 0);
            x = ops::norm_channel_op(tp, x, b.id(p + ".norm.gamma"), b.id(p + ".norm.beta"));
        }
    }
    return x;
}

template <typename S>
int forward_logits(BoundModel<S>& b, int features) {
    Tape<S>& tp = *b.tape;
    int pooled = ops::mean_spatial(tp, features);
    if (b.model->spec.equivariant) {
        int lt = ops::eq_linear_op(tp, pooled, b.id("head.W"), b.id("head.b"));
        return ops::mean_groups(tp, lt);
    }
    return ops::dense_op(tp, pooled, b.id("head.W"), b.id("head.b"));
}

// Convenience no-grad evaluations.
template <typename S>
Ten<S> model_features(const Model<S>& m, const Ten<S>& img) {
    Tape<S> tp(false);
    auto b = bind_model(m, tp);
    return tp.val(forward_features(b, tp.leaf(img)));
}

template <typename S>
Ten<S> model_logits(const Model<S>& m, const Ten<S>& img) {
    Tape<S> tp(false);
    auto b = bind_model(m, tp);
    return tp.val(forward_logits(b, forward_features(b, tp.leaf(img))));
}

// Exact integer parameter counts grouped by layer (name up to the last dot).
template <typename S>
CountReport count_params(const Model<S>& m) {
    CountReport report;
    std::map<std::string, int64_t> layers;
    for (const auto& [name, p] : m.params) {
        const auto pos = name.rfind('.');
        layers[pos == std::string::npos ? name : name.substr(0, pos)] += p.numel();
        report.total += p.numel();
    }
    report.per_layer.assign(layers.begin(), layers.end());
    return report;
}

// --- checkpoints --------------------------------------------------------------

void write_manifest(const std::string& dir, const ModelSpec& spec, Dtype dtype,
                    const std::vector<std::pair<std::string, std::vector<int64_t>>>& entries);
struct ManifestEntry {
    std::string name;
    std::string file;
    std::vector<int64_t> dims;
};
struct Manifest {
    ModelSpec spec;
    Dtype dtype;
    std::vector<ManifestEntry> entries;
};
Manifest read_manifest(const std::string& dir);
std::string checkpoint_file_name(const std::string& param_name);

template <typename S>
void save_checkpoint(const std::string& dir, const Model<S>& m) {
    std::vector<std::pair<std::string, std::vector<int64_t>>> entries;
    for (const auto& [name, p] : m.params) {
        write_tensor(dir + "/" + checkpoint_file_name(name), p);
        entries.emplace_back(name, p.dims);
    }
    write_manifest(dir, m.spec, dtype_of<S>(), entries);
}

template <typename S>
Model<S> load_checkpoint(const std::string& dir) {
    Manifest man = read_manifest(dir);
    Model<S> m;
    m.spec = man.spec;
    for (const auto& e : man.entries) {
        TensorFile tf = read_tensor_file(dir + "/" + e.file);
        if (tf.dims != e.dims)
            throw FormatError(dir + ": dims mismatch for " + e.name + ": manifest " + dims_str(e.dims) +
                              " vs file " + dims_str(tf.dims));
        Ten<S> t;
        if (tf.dtype == dtype_of<S>()) {
            t = Ten<S>(tf.dims);
            std::copy(tf.payload.begin(), tf.payload.end(), reinterpret_cast<unsigned char*>(t.data.data()));
        } else if (tf.dtype == Dtype::f32) {
            Ten<float> f(tf.dims);
            std::copy(tf.payload.begin(), tf.payload.end(), reinterpret_cast<unsigned char*>(f.data.data()));
            t = f.template cast<S>();
        } else if (tf.dtype == Dtype::f64) {
            Ten<double> f(tf.dims);
            std::copy(tf.payload.begin(), tf.payload.end(), reinterpret_cast<unsigned char*>(f.data.data()));
            t = f.template cast<S>();
        } else {
            throw FormatError(dir + ": integer parameter tensors are not supported");
        }
        m.params[e.name] = std::move(t);
    }
    // Verify the parameter set matches what the spec would build.
    Model<S> skeleton = build_model<S>(m.spec, 0);
    for (const auto& [name, p] : skeleton.params) {
        auto it = m.params.find(name);
        if (it == m.params.end()) throw FormatError(dir + ": checkpoint is missing parameter " + name);
        if (it->second.dims != p.dims)
            throw FormatError(dir + ": parameter " + name + " has dims " + dims_str(it->second.dims) +
                              ", spec expects " + dims_str(p.dims));
    }
    if (m.params.size() != skeleton.params.size())
        throw FormatError(dir + ": checkpoint has extra parameters");
    return m;
}

}  // namespace eqscan
