#include "eqscan/tensor.hpp"

#include <bit>
#include <cstdio>
#include <memory>

static_assert(std::endian::native == std::endian::little,
              "tensor file I/O assumes a little-endian host");

namespace eqscan {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& path, int64_t offset, const std::string& what) {
    throw FormatError(path + ": " + what + " at byte offset " + std::to_string(offset));
}

}  // namespace

TensorFile read_tensor_file(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw FormatError(path + ": cannot open for reading");

    unsigned char magic[4];
    if (std::fread(magic, 1, 4, f.get()) != 4) fail(path, 0, "truncated header (magic)");
    if (magic[0] != 'E' || magic[1] != 'Q' || magic[2] != 'T' || magic[3] != '1')
        fail(path, 0, "bad magic, expected \"EQT1\"");

    unsigned char dtype_code = 0, ndim = 0;
    if (std::fread(&dtype_code, 1, 1, f.get()) != 1) fail(path, 4, "truncated header (dtype)");
    if (dtype_code > 2) fail(path, 4, "unknown dtype code " + std::to_string(int(dtype_code)));
    if (std::fread(&ndim, 1, 1, f.get()) != 1) fail(path, 5, "truncated header (ndim)");
    if (ndim == 0) fail(path, 5, "ndim must be >= 1");

    TensorFile tf;
    tf.dtype = static_cast<Dtype>(dtype_code);
    int64_t offset = 6;
    for (int i = 0; i < int(ndim); ++i) {
        unsigned char b[4];
        if (std::fread(b, 1, 4, f.get()) != 4) fail(path, offset, "truncated dims");
        uint32_t d = uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
        if (d == 0) fail(path, offset, "axis length 0");
        tf.dims.push_back(int64_t(d));
        offset += 4;
    }

    const int64_t elems = Ten<double>::count(tf.dims);
    const int64_t bytes = elems * int64_t(dtype_size(tf.dtype));
    tf.payload.resize(size_t(bytes));
    const size_t got = std::fread(tf.payload.data(), 1, size_t(bytes), f.get());
    if (int64_t(got) != bytes)
        fail(path, offset + int64_t(got),
             "truncated payload: expected " + std::to_string(bytes) + " bytes, got " + std::to_string(got));

    unsigned char extra;
    if (std::fread(&extra, 1, 1, f.get()) == 1)
        fail(path, offset + bytes, "trailing bytes after payload");
    return tf;
}

void write_tensor_file(const std::string& path, const TensorFile& tf) {
    if (tf.dims.empty()) throw ShapeError("tensor needs at least one axis");
    if (tf.dims.size() > 255) throw ShapeError("too many axes for format (max 255)");
    for (int64_t d : tf.dims)
        if (d < 1 || d > int64_t(UINT32_MAX)) throw ShapeError("axis length out of format range");
    const int64_t expected = Ten<double>::count(tf.dims) * int64_t(dtype_size(tf.dtype));
    if (expected != int64_t(tf.payload.size()))
        throw ShapeError("payload size does not match dims and dtype");

    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw FormatError(path + ": cannot open for writing");

    const unsigned char magic[4] = {'E', 'Q', 'T', '1'};
    const unsigned char dtype_code = static_cast<unsigned char>(tf.dtype);
    const unsigned char ndim = static_cast<unsigned char>(tf.dims.size());
    bool ok = std::fwrite(magic, 1, 4, f.get()) == 4 && std::fwrite(&dtype_code, 1, 1, f.get()) == 1 &&
              std::fwrite(&ndim, 1, 1, f.get()) == 1;
    for (int64_t d : tf.dims) {
        const uint32_t u = uint32_t(d);
        unsigned char b[4] = {static_cast<unsigned char>(u & 0xff), static_cast<unsigned char>((u >> 8) & 0xff),
                              static_cast<unsigned char>((u >> 16) & 0xff),
                              static_cast<unsigned char>((u >> 24) & 0xff)};
        ok = ok && std::fwrite(b, 1, 4, f.get()) == 4;
    }
    ok = ok && std::fwrite(tf.payload.data(), 1, tf.payload.size(), f.get()) == tf.payload.size();
    if (!ok) throw FormatError(path + ": write failed");
}

}  // namespace eqscan
