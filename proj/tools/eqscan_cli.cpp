// Command-line entry point: dataset synthesis, training, evaluation,
// equivariance verification, gradient checking and parameter accounting.
// Reports are written as JSON; exit codes encode pass/fail so CI can gate.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "eqscan/harness.hpp"

using namespace eqscan;
using nlohmann::json;

namespace {

void write_json(const std::string& path, const json& j) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out << j.dump(2) << "\n";
}

std::string split_images(const std::string& dir, const std::string& split) {
    return dir + "/" + split + "-images-idx3-ubyte";
}
std::string split_labels(const std::string& dir, const std::string& split) {
    return dir + "/" + split + "-labels-idx1-ubyte";
}

ModelSpec spec_from_flag(const std::string& spec_path, bool equivariant_default = true) {
    if (spec_path.empty()) return micro_spec(equivariant_default);
    return read_spec_file(spec_path);
}

json nmse_report_json(const NmseReport& rep) {
    json per;
    for (int t = rep.include_identity ? 0 : 1; t < 4; ++t)
        per["t" + std::to_string(t)] = rep.per_rotation[size_t(t)];
    return {{"per_rotation", per},     {"mean", rep.mean},
            {"include_identity", rep.include_identity},
            {"model_id", rep.model_id}, {"dtype", rep.dtype},
            {"level", rep.level},       {"samples", rep.sample_count}};
}

json grad_report_json(const GradReport& rep) {
    json per = json::object();
    for (const auto& [name, err] : rep.per_param) per[name] = err;
    return {{"max_rel_err", rep.max_rel_err},
            {"max_abs_err", rep.max_abs_err},
            {"coords_checked", rep.coords_checked},
            {"coords_below_resolution", rep.coords_below_resolution},
            {"epsilon", rep.epsilon},
            {"dtype", rep.dtype},
            {"per_param", per}};
}

struct VerifyArgs {
    std::string model_dir, spec_path, data_dir, split = "test", out;
    std::string dtype = "f64", level = "feature";
    int64_t synthetic = 8;
    uint64_t seed = 0;
    bool include_identity = false, deterministic = false;
};

template <typename S>
int run_verify(const VerifyArgs& a) {
    Model<S> model;
    std::string model_id;
    if (!a.model_dir.empty()) {
        model = load_checkpoint<S>(a.model_dir);
        model_id = a.model_dir;
    } else {
        model = build_model<S>(spec_from_flag(a.spec_path), a.seed);
        model_id = (a.spec_path.empty() ? std::string("micro") : a.spec_path) + ":untrained:seed" +
                   std::to_string(a.seed);
    }
    ToyDataset ds = a.data_dir.empty()
                        ? synth_shapes(a.seed, a.synthetic, model.spec.num_classes)
                        : load_idx(split_images(a.data_dir, a.split), split_labels(a.data_dir, a.split));
    const ReportLevel level = a.level == "feature" ? ReportLevel::feature : ReportLevel::logits;
    NmseReport rep = equivariance_report(model, ds, level, a.include_identity, model_id);
    json j = nmse_report_json(rep);
    const double threshold = dtype_of<S>() == Dtype::f64 ? 1e-12 : 1e-5;
    const bool pass = !model.spec.equivariant || rep.mean < threshold;
    j["equivariant_model"] = model.spec.equivariant;
    j["threshold"] = model.spec.equivariant ? threshold : 0.0;
    j["pass"] = pass;
    write_json(a.out, j);
    std::printf("verify: model=%s level=%s dtype=%s samples=%lld mean NMSE=%.3e%s\n", model_id.c_str(),
                rep.level.c_str(), rep.dtype.c_str(), static_cast<long long>(rep.sample_count), rep.mean,
                model.spec.equivariant ? (pass ? "  [PASS]" : "  [FAIL]") : "");
    return pass ? 0 : 1;
}

struct TrainArgs {
    std::string spec_path, data_dir, out_dir, report;
    std::string dtype = "f64";
    int64_t epochs = 16, batch = 16;
    double lr = 0.1, wd = 0.0;
    uint64_t seed = 0;
    bool deterministic = false;
};

template <typename S>
int run_train(const TrainArgs& a) {
    ModelSpec spec = spec_from_flag(a.spec_path);
    ToyDataset train = load_idx(split_images(a.data_dir, "train"), split_labels(a.data_dir, "train"));
    Model<S> model = build_model<S>(spec, a.seed);
    TrainResult result = train_toy(model, train, a.epochs, a.lr, a.seed, a.wd, a.batch);
    if (!a.out_dir.empty()) {
        std::filesystem::create_directories(a.out_dir);
        save_checkpoint(a.out_dir, model);
    }
    json epochs = json::array();
    for (size_t e = 0; e < result.epochs.size(); ++e)
        epochs.push_back({{"epoch", e},
                          {"loss", result.epochs[e].loss},
                          {"train_accuracy", result.epochs[e].train_accuracy}});
    write_json(a.report, {{"epochs", epochs},
                          {"seed", a.seed},
                          {"lr", a.lr},
                          {"weight_decay", a.wd},
                          {"batch", a.batch},
                          {"dtype", dtype_name(dtype_of<S>())},
                          {"checkpoint", a.out_dir}});
    std::printf("train: %zu epochs, final loss %.4f, train accuracy %.3f%s%s\n", result.epochs.size(),
                result.epochs.back().loss, result.epochs.back().train_accuracy,
                a.out_dir.empty() ? "" : ", checkpoint at ", a.out_dir.c_str());
    return 0;
}

template <typename S>
int run_eval(const std::string& model_dir, const std::string& data_dir, const std::string& split,
             const std::string& out) {
    Model<S> model = load_checkpoint<S>(model_dir);
    ToyDataset ds = load_idx(split_images(data_dir, split), split_labels(data_dir, split));
    const double acc = accuracy(model, ds);
    write_json(out, {{"model", model_dir}, {"split", split}, {"samples", ds.size()}, {"accuracy", acc}});
    std::printf("eval: %s on %s -> accuracy %.4f (%lld samples)\n", model_dir.c_str(), split.c_str(), acc,
                static_cast<long long>(ds.size()));
    return 0;
}

struct GradcheckArgs {
    std::string spec_path, out;
    int64_t coords = 200, batch = 4;
    double h = 1e-6;
    uint64_t seed = 0;
    bool literal = false;
};

int run_gradcheck(const GradcheckArgs& a) {
    using ParamMap = std::map<std::string, Ten<double>>;
    ModelSpec spec = spec_from_flag(a.spec_path);
    Model<double> model = build_model<double>(spec, a.seed);
    ToyDataset ds = synth_shapes(a.seed + 1, a.batch, spec.num_classes);

    auto loss_fn = [&](const ParamMap& params, ParamMap* grads) {
        Model<double> mm;
        mm.spec = spec;
        mm.params = params;
        Tape<double> tp(grads != nullptr);
        auto bound = bind_model(mm, tp);
        int acc = -1;
        for (int64_t i = 0; i < ds.size(); ++i) {
            int img = tp.leaf(harness_detail::sample_image<double>(ds, i));
            int logits = forward_logits(bound, forward_features(bound, img));
            int l = ops::ce_loss(tp, logits, ds.labels.data[size_t(i)]);
            acc = acc < 0 ? l : ops::add(tp, acc, l);
        }
        int mean = ops::scale(tp, acc, 1.0 / double(ds.size()));
        if (grads) {
            tp.backward(mean, Ten<double>({1}, {1.0}));
            *grads = tp.named_grads();
        }
        return double(tp.val(mean).data[0]);
    };

    ParamMap analytic;
    loss_fn(model.params, &analytic);
    auto f = [&](const ParamMap& q) { return loss_fn(q, nullptr); };

    GradReport rep;
    bool pass;
    if (a.literal) {
        rep = finite_diff_check<double>(f, model.params, analytic, a.h, a.coords, a.seed);
        pass = rep.max_rel_err < 1e-5;
    } else {
        rep = finite_diff_check_resolved<double>(f, model.params, analytic, a.h, a.coords, a.seed);
        pass = rep.max_rel_err < 1e-5 && rep.max_abs_err < 1e-8;
    }
    json j = grad_report_json(rep);
    j["mode"] = a.literal ? "literal-uniform" : "resolved";
    j["pass"] = pass;
    write_json(a.out, j);
    std::printf("gradcheck(%s): coords=%lld max_rel=%.3e max_abs=%.3e  [%s]\n",
                a.literal ? "literal" : "resolved", static_cast<long long>(rep.coords_checked),
                rep.max_rel_err, rep.max_abs_err, pass ? "PASS" : "FAIL");
    return pass ? 0 : 1;
}

int run_params(const std::string& spec_path, bool compare_baseline, const std::string& out) {
    ModelSpec spec = spec_from_flag(spec_path);
    Model<double> model = build_model<double>(spec, 0);
    CountReport rep = count_params(model);
    json layers = json::object();
    for (const auto& [layer, count] : rep.per_layer) layers[layer] = count;
    json j{{"equivariant", spec.equivariant}, {"total", rep.total}, {"per_layer", layers}};
    std::printf("params: total %lld (%s)\n", static_cast<long long>(rep.total),
                spec.equivariant ? "equivariant" : "baseline");
    if (compare_baseline) {
        ModelSpec other = spec;
        other.equivariant = !spec.equivariant;
        CountReport orep = count_params(build_model<double>(other, 0));
        const int64_t eq_total = spec.equivariant ? rep.total : orep.total;
        const int64_t base_total = spec.equivariant ? orep.total : rep.total;
        const double ratio = double(eq_total) / double(base_total);
        j["counterpart_total"] = orep.total;
        j["eq_over_baseline_ratio"] = ratio;
        std::printf("params: counterpart %lld, EQ/baseline ratio %.4f\n",
                    static_cast<long long>(orep.total), ratio);
    }
    write_json(out, j);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"p4 rotation-equivariant visual Mamba toolkit"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate the oriented-glyph dataset as IDX files");
    uint64_t synth_seed = 0;
    int64_t train_n = 128, test_n = 32, classes = 4;
    std::string synth_out = "data";
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--train-n", train_n, "canonical training images");
    synth->add_option("--test-n", test_n, "canonical test images");
    synth->add_option("--classes", classes, "number of glyph classes (2..4)");
    synth->add_option("--out", synth_out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a model on an IDX dataset");
    TrainArgs ta;
    train->add_option("--spec", ta.spec_path, "model spec file (default: built-in micro spec)");
    train->add_option("--data", ta.data_dir, "dataset directory from `synth`")->required();
    train->add_option("--epochs", ta.epochs);
    train->add_option("--lr", ta.lr);
    train->add_option("--wd", ta.wd, "weight decay");
    train->add_option("--batch", ta.batch);
    train->add_option("--seed", ta.seed);
    train->add_option("--dtype", ta.dtype)->check(CLI::IsMember({"f32", "f64"}));
    train->add_option("--out", ta.out_dir, "checkpoint directory");
    train->add_option("--report", ta.report, "metrics JSON path");
    train->add_flag("--deterministic", ta.deterministic, "single-threaded execution");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    std::string eval_model, eval_data, eval_split = "test", eval_out, eval_dtype = "f64";
    eval->add_option("--model", eval_model)->required();
    eval->add_option("--data", eval_data)->required();
    eval->add_option("--split", eval_split, "train | test | test-rot");
    eval->add_option("--dtype", eval_dtype)->check(CLI::IsMember({"f32", "f64"}));
    eval->add_option("--out", eval_out, "report JSON path");

    auto* verify = app.add_subcommand("verify", "equivariance NMSE report (Table-style protocol)");
    VerifyArgs va;
    verify->add_option("--model", va.model_dir, "checkpoint directory");
    verify->add_option("--spec", va.spec_path, "spec file for an untrained model");
    verify->add_option("--seed", va.seed, "init/data seed");
    verify->add_option("--data", va.data_dir, "dataset directory");
    verify->add_option("--split", va.split);
    verify->add_option("--synthetic", va.synthetic, "synthetic sample count when no --data");
    verify->add_option("--dtype", va.dtype)->check(CLI::IsMember({"f32", "f64"}));
    verify->add_option("--level", va.level)->check(CLI::IsMember({"feature", "logits"}));
    verify->add_flag("--include-identity", va.include_identity, "include t=0 in the mean");
    verify->add_flag("--deterministic", va.deterministic, "single-threaded execution");
    verify->add_option("--out", va.out, "report JSON path");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    GradcheckArgs ga;
    gradcheck->add_option("--spec", ga.spec_path);
    gradcheck->add_option("--seed", ga.seed);
    gradcheck->add_option("--coords", ga.coords, "minimum checked coordinates");
    gradcheck->add_option("--step", ga.h, "central-difference step");
    gradcheck->add_option("--batch", ga.batch, "synthetic samples in the loss");
    gradcheck->add_flag("--literal", ga.literal, "uniform coordinate sampling, relative error only");
    gradcheck->add_option("--out", ga.out, "report JSON path");

    auto* params = app.add_subcommand("params", "parameter accounting");
    std::string params_spec, params_out;
    bool compare_baseline = false;
    params->add_option("--spec", params_spec);
    params->add_flag("--compare-baseline", compare_baseline, "also count the width-matched counterpart");
    params->add_option("--out", params_out, "report JSON path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            apply_thread_env();
            std::filesystem::create_directories(synth_out);
            ToyDataset tr = synth_shapes(synth_seed, train_n, classes);
            ToyDataset te = synth_shapes(synth_seed + 1, test_n, classes);
            ToyDataset rot = rotated_split(te);
            write_idx(split_images(synth_out, "train"), split_labels(synth_out, "train"), tr);
            write_idx(split_images(synth_out, "test"), split_labels(synth_out, "test"), te);
            write_idx(split_images(synth_out, "test-rot"), split_labels(synth_out, "test-rot"), rot);
            std::printf("synth: wrote %lld train / %lld test / %lld rotated-test images to %s\n",
                        static_cast<long long>(tr.size()), static_cast<long long>(te.size()),
                        static_cast<long long>(rot.size()), synth_out.c_str());
            return 0;
        }
        if (train->parsed()) {
            apply_thread_env(ta.deterministic);
            return ta.dtype == "f32" ? run_train<float>(ta) : run_train<double>(ta);
        }
        if (eval->parsed()) {
            apply_thread_env();
            return eval_dtype == "f32" ? run_eval<float>(eval_model, eval_data, eval_split, eval_out)
                                       : run_eval<double>(eval_model, eval_data, eval_split, eval_out);
        }
        if (verify->parsed()) {
            apply_thread_env(va.deterministic);
            return va.dtype == "f32" ? run_verify<float>(va) : run_verify<double>(va);
        }
        if (gradcheck->parsed()) {
            apply_thread_env();
            return run_gradcheck(ga);
        }
        if (params->parsed()) {
            return run_params(params_spec, compare_baseline, params_out);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
