#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "eqscan/harness.hpp"

using namespace eqscan;

namespace {

ModelSpec nano_spec(bool equivariant) {
    ModelSpec spec;
    spec.stages = {{1, 8}, {1, 16}};
    spec.patch_stride = 2;
    spec.in_channels = 1;
    spec.hidden_state = 4;
    spec.num_classes = 4;
    spec.equivariant = equivariant;
    return spec;
}

}  // namespace

TEST_CASE("nmse: zero for equal tensors, 2.0 for orthogonal unit vectors") {
    Ten<double> a({2}, {1, 0});
    Ten<double> b({2}, {0, 1});
    CHECK(nmse(a, a) == 0.0);
    CHECK(nmse(a, b) == doctest::Approx(2.0));
    Ten<double> scaled({2}, {1 + 1e-3, 0});
    Ten<double> ref({2}, {1, 0});
    CHECK(nmse(scaled, ref) == doctest::Approx(1e-6).epsilon(1e-6));
    Ten<double> zero({2});
    CHECK_THROWS_AS(nmse(a, zero), DomainError);
}

TEST_CASE("synthetic datasets are reproducible and balanced") {
    ToyDataset a = synth_shapes(7, 40, 4);
    ToyDataset b = synth_shapes(7, 40, 4);
    CHECK(a.images.data == b.images.data);
    CHECK(a.labels.data == b.labels.data);
    ToyDataset c = synth_shapes(8, 40, 4);
    CHECK(a.images.data != c.images.data);
    std::array<int, 4> counts{};
    for (int64_t v : a.labels.data) counts[size_t(v)]++;
    for (int cnt : counts) CHECK(cnt == 10);
}

TEST_CASE("rotated split holds each image under all four rotations with the label kept") {
    ToyDataset ds = synth_shapes(3, 8, 4);
    ToyDataset rot = rotated_split(ds);
    CHECK(rot.size() == 32);
    const int64_t hw = 16 * 16;
    for (int64_t i = 0; i < ds.size(); ++i) {
        Ten<double> img({16, 16, 1});
        std::copy_n(ds.images.data.data() + i * hw, hw, img.data.data());
        for (int t = 0; t < 4; ++t) {
            CHECK(rot.labels.data[size_t(i * 4 + t)] == ds.labels.data[size_t(i)]);
            Ten<double> expect = rotate_spatial(img, t);
            const double* got = rot.images.data.data() + (i * 4 + t) * hw;
            bool same = true;
            for (int64_t k = 0; k < hw; ++k)
                if (got[k] != expect.data[size_t(k)]) same = false;
            CHECK(same);
        }
    }
}

TEST_CASE("idx files round trip through the standard magics") {
    ToyDataset ds = synth_shapes(5, 12, 4);
    const auto dir = std::filesystem::temp_directory_path() / "eqscan_idx";
    std::filesystem::create_directories(dir);
    const std::string imgs = (dir / "images-idx3-ubyte").string();
    const std::string labs = (dir / "labels-idx1-ubyte").string();
    write_idx(imgs, labs, ds);

    std::ifstream f(imgs, std::ios::binary);
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    CHECK(((b[0] << 24) | (b[1] << 16) | (b[2] << 8) | b[3]) == 2051);

    ToyDataset back = load_idx(imgs, labs);
    CHECK(back.size() == 12);
    CHECK(back.labels.data == ds.labels.data);
    // u8 quantization round trips values rendered on the 1/255 grid
    double max_err = 0;
    for (size_t i = 0; i < ds.images.data.size(); ++i)
        max_err = std::max(max_err, std::abs(ds.images.data[i] - back.images.data[i]));
    CHECK(max_err < 0.5 / 255.0 + 1e-9);
    std::filesystem::remove_all(dir);
}

TEST_CASE("idx loader rejects wrong magic and truncation") {
    const auto dir = std::filesystem::temp_directory_path() / "eqscan_idx_bad";
    std::filesystem::create_directories(dir);
    const std::string imgs = (dir / "img").string();
    const std::string labs = (dir / "lab").string();
    {
        std::ofstream f(imgs, std::ios::binary);
        const unsigned char bad[] = {0, 0, 8, 2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2};
        f.write(reinterpret_cast<const char*>(bad), sizeof(bad));
    }
    CHECK_THROWS_WITH_AS(load_idx(imgs, labs), doctest::Contains("magic"), FormatError);
    {
        std::ofstream f(imgs, std::ios::binary);
        const unsigned char hdr[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 4, 0, 0, 0, 4, 9, 9};
        f.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    }
    CHECK_THROWS_WITH_AS(load_idx(imgs, labs), doctest::Contains("truncated"), FormatError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("equivariance report: identity rotation is exactly zero, EQ mean below 1e-12") {
    auto m = build_model<double>(nano_spec(true), 4);
    ToyDataset ds = synth_shapes(11, 4, 4);
    NmseReport rep = equivariance_report(m, ds, ReportLevel::feature, /*include_identity=*/true);
    CHECK(rep.per_rotation[0] == 0.0);
    CHECK(rep.mean < 1e-12);
    NmseReport logit_rep = equivariance_report(m, ds, ReportLevel::logits);
    CHECK(logit_rep.mean < 1e-12);
    CHECK(logit_rep.sample_count == 4);
    CHECK(logit_rep.dtype == "f64");
}

TEST_CASE("baseline equivariance report shows the expected large error") {
    auto m = build_model<double>(nano_spec(false), 4);
    ToyDataset ds = synth_shapes(12, 4, 4);
    NmseReport rep = equivariance_report(m, ds, ReportLevel::feature);
    CHECK(rep.mean > 1e-2);
}

TEST_CASE("reports are bit-reproducible") {
    auto m = build_model<double>(nano_spec(true), 5);
    ToyDataset ds = synth_shapes(13, 6, 4);
    NmseReport a = equivariance_report(m, ds, ReportLevel::feature);
    NmseReport b = equivariance_report(m, ds, ReportLevel::feature);
    CHECK(a.per_rotation == b.per_rotation);
    CHECK(a.mean == b.mean);
}

TEST_CASE("train_toy with lr=0 leaves parameters bit-identical") {
    auto m = build_model<double>(nano_spec(true), 6);
    auto before = m.params;
    ToyDataset ds = synth_shapes(14, 8, 4);
    train_toy(m, ds, 2, 0.0, 1);
    for (auto& [name, p] : m.params) CHECK(p.data == before.at(name).data);
}

TEST_CASE("a few epochs reduce the training loss") {
    auto m = build_model<double>(nano_spec(true), 7);
    ToyDataset ds = synth_shapes(15, 32, 4);
    TrainResult r = train_toy(m, ds, 4, 0.1, 2);
    REQUIRE(r.epochs.size() == 4);
    CHECK(r.epochs.back().loss < r.epochs.front().loss);
    CHECK(std::isfinite(r.epochs.back().train_accuracy));
}

TEST_CASE("training trajectories replay bit-exactly for a fixed seed") {
    ToyDataset ds = synth_shapes(16, 16, 4);
    auto m1 = build_model<double>(nano_spec(true), 8);
    auto m2 = build_model<double>(nano_spec(true), 8);
    TrainResult r1 = train_toy(m1, ds, 2, 0.05, 3);
    TrainResult r2 = train_toy(m2, ds, 2, 0.05, 3);
    for (size_t e = 0; e < r1.epochs.size(); ++e) CHECK(r1.epochs[e].loss == r2.epochs[e].loss);
    for (auto& [name, p] : m1.params) CHECK(p.data == m2.params.at(name).data);
}
