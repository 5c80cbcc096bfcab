#include "eqscan/harness.hpp"

#include <cstdio>
#include <cstdlib>
#include <memory>

namespace eqscan {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint32_t read_u32_be(std::FILE* f, const std::string& path, const char* what) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) throw FormatError(path + ": truncated " + what);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_u32_be(std::FILE* f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    std::fwrite(b, 1, 4, f);
}

constexpr uint32_t kIdxImagesMagic = 2051;
constexpr uint32_t kIdxLabelsMagic = 2049;

}  // namespace

ToyDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    FilePtr fi(std::fopen(images_path.c_str(), "rb"));
    if (!fi) throw FormatError(images_path + ": cannot open");
    const uint32_t imagic = read_u32_be(fi.get(), images_path, "magic");
    if (imagic != kIdxImagesMagic)
        throw FormatError(images_path + ": bad image magic " + std::to_string(imagic) + ", expected 2051");
    const uint32_t n = read_u32_be(fi.get(), images_path, "count");
    const uint32_t rows = read_u32_be(fi.get(), images_path, "rows");
    const uint32_t cols = read_u32_be(fi.get(), images_path, "cols");
    if (n == 0 || rows == 0 || cols == 0 || uint64_t(n) * rows * cols > (uint64_t(1) << 32))
        throw FormatError(images_path + ": dims out of range");
    std::vector<unsigned char> raw(size_t(n) * rows * cols);
    if (std::fread(raw.data(), 1, raw.size(), fi.get()) != raw.size())
        throw FormatError(images_path + ": truncated pixel payload");

    FilePtr fl(std::fopen(labels_path.c_str(), "rb"));
    if (!fl) throw FormatError(labels_path + ": cannot open");
    const uint32_t lmagic = read_u32_be(fl.get(), labels_path, "magic");
    if (lmagic != kIdxLabelsMagic)
        throw FormatError(labels_path + ": bad label magic " + std::to_string(lmagic) + ", expected 2049");
    const uint32_t ln = read_u32_be(fl.get(), labels_path, "count");
    if (ln != n) throw FormatError(labels_path + ": label count does not match image count");
    std::vector<unsigned char> lraw(static_cast<size_t>(n));
    if (std::fread(lraw.data(), 1, lraw.size(), fl.get()) != lraw.size())
        throw FormatError(labels_path + ": truncated label payload");

    ToyDataset ds;
    ds.images = Ten<double>({int64_t(n), int64_t(rows), int64_t(cols), 1});
    for (size_t i = 0; i < raw.size(); ++i) ds.images.data[i] = double(raw[i]) / 255.0;
    ds.labels = Ten<int64_t>({int64_t(n)});
    for (size_t i = 0; i < lraw.size(); ++i) ds.labels.data[i] = int64_t(lraw[i]);
    ds.provenance = "idx-file:" + images_path;
    return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path, const ToyDataset& ds) {
    if (ds.images.dim(3) != 1) throw ShapeError("write_idx supports single-channel images");
    FilePtr fi(std::fopen(images_path.c_str(), "wb"));
    if (!fi) throw FormatError(images_path + ": cannot open for writing");
    write_u32_be(fi.get(), kIdxImagesMagic);
    write_u32_be(fi.get(), uint32_t(ds.images.dim(0)));
    write_u32_be(fi.get(), uint32_t(ds.images.dim(1)));
    write_u32_be(fi.get(), uint32_t(ds.images.dim(2)));
    std::vector<unsigned char> raw(ds.images.data.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        double v = ds.images.data[i];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        raw[i] = static_cast<unsigned char>(v * 255.0 + 0.5);
    }
    if (std::fwrite(raw.data(), 1, raw.size(), fi.get()) != raw.size())
        throw FormatError(images_path + ": write failed");

    FilePtr fl(std::fopen(labels_path.c_str(), "wb"));
    if (!fl) throw FormatError(labels_path + ": cannot open for writing");
    write_u32_be(fl.get(), kIdxLabelsMagic);
    write_u32_be(fl.get(), uint32_t(ds.labels.dim(0)));
    std::vector<unsigned char> lraw(ds.labels.data.size());
    for (size_t i = 0; i < lraw.size(); ++i) lraw[i] = static_cast<unsigned char>(ds.labels.data[i]);
    if (std::fwrite(lraw.data(), 1, lraw.size(), fl.get()) != lraw.size())
        throw FormatError(labels_path + ": write failed");
}

namespace {

constexpr int64_t kGlyphSize = 16;

void hline(Ten<double>& img, int64_t n, int64_t row, int64_t c0, int64_t c1, double v) {
    for (int64_t c = c0; c <= c1; ++c) img(n, row, c, int64_t(0)) = v;
}

void vline(Ten<double>& img, int64_t n, int64_t col, int64_t r0, int64_t r1, double v) {
    for (int64_t r = r0; r <= r1; ++r) img(n, r, col, int64_t(0)) = v;
}

// Canonical 8x8 glyphs drawn at (r, c) with 2-pixel strokes. All four shapes
// break rotational symmetry.
void draw_glyph(Ten<double>& img, int64_t n, int64_t cls, int64_t r, int64_t c, double v) {
    switch (cls) {
        case 0:  // L: left vertical + bottom horizontal
            vline(img, n, c, r, r + 7, v);
            vline(img, n, c + 1, r, r + 7, v);
            hline(img, n, r + 6, c, c + 7, v);
            hline(img, n, r + 7, c, c + 7, v);
            break;
        case 1:  // T: top horizontal + centre vertical
            hline(img, n, r, c, c + 7, v);
            hline(img, n, r + 1, c, c + 7, v);
            vline(img, n, c + 3, r, r + 7, v);
            vline(img, n, c + 4, r, r + 7, v);
            break;
        case 2:  // arrow: centre vertical with an apex-up chevron
            vline(img, n, c + 3, r, r + 7, v);
            vline(img, n, c + 4, r, r + 7, v);
            for (int64_t k = 0; k < 3; ++k) {
                img(n, r + 1 + k, c + 2 - k, int64_t(0)) = v;
                img(n, r + 1 + k, c + 5 + k, int64_t(0)) = v;
            }
            break;
        default:  // bar: single vertical stroke
            vline(img, n, c + 3, r, r + 7, v);
            vline(img, n, c + 4, r, r + 7, v);
            break;
    }
}

}  // namespace

ToyDataset synth_shapes(uint64_t seed, int64_t n, int64_t classes) {
    if (classes < 2 || classes > 4) throw ValueError("synth_shapes supports 2..4 classes");
    if (n < 1) throw ValueError("synth_shapes: n must be >= 1");
    Rng rng(seed);
    ToyDataset ds;
    ds.images = Ten<double>({n, kGlyphSize, kGlyphSize, 1});
    ds.labels = Ten<int64_t>({n});
    for (int64_t i = 0; i < n; ++i) {
        const int64_t cls = i % classes;
        const int64_t r = 2 + rng.integer(0, 3);  // glyph box is 8x8 inside 16x16
        const int64_t c = 2 + rng.integer(0, 3);
        const double v = 0.75 + 0.25 * rng.uniform();
        draw_glyph(ds.images, i, cls, r, c, v);
        ds.labels.data[size_t(i)] = cls;
    }
    ds.provenance = "synthetic-seeded:" + std::to_string(seed);
    return ds;
}

ToyDataset rotated_split(const ToyDataset& ds) {
    const int64_t n = ds.size(), h = ds.images.dim(1), w = ds.images.dim(2), c = ds.images.dim(3);
    if (h != w) throw ShapeError("rotated_split expects square images");
    ToyDataset out;
    out.images = Ten<double>({4 * n, h, w, c});
    out.labels = Ten<int64_t>({4 * n});
    for (int64_t i = 0; i < n; ++i) {
        Ten<double> img({h, w, c});
        std::copy_n(ds.images.data.data() + i * h * w * c, h * w * c, img.data.data());
        for (int t = 0; t < 4; ++t) {
            Ten<double> rot = rotate_spatial(img, t);
            std::copy_n(rot.data.data(), h * w * c, out.images.data.data() + (i * 4 + t) * h * w * c);
            out.labels.data[size_t(i * 4 + t)] = ds.labels.data[size_t(i)];
        }
    }
    out.provenance = ds.provenance + "+rotated";
    return out;
}

void apply_thread_env(bool force_serial) {
#ifdef _OPENMP
    if (force_serial) {
        omp_set_num_threads(1);
        return;
    }
    if (const char* env = std::getenv("EQSCAN_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) omp_set_num_threads(cap);
    }
#else
    (void)force_serial;
#endif
}

}  // namespace eqscan
