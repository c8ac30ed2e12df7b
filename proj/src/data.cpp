#include "ddcal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "ddcal/error.hpp"
#include "ddcal/rng.hpp"
#include "ddcal/tensor_io.hpp"

namespace ddcal {

std::vector<std::size_t> LabeledDataset::class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
    for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
    return counts;
}

std::vector<std::size_t> LabeledDataset::indices_of(int label) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == label) idx.push_back(i);
    return idx;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> idx) const {
    LabeledDataset out;
    out.name = name;
    out.num_classes = num_classes;
    out.example_shape = example_shape;
    out.normalization = normalization;
    out.examples = gather_rows(examples, idx);
    out.labels.reserve(idx.size());
    for (std::size_t i : idx) out.labels.push_back(labels.at(i));
    return out;
}

void LabeledDataset::validate() const {
    if (examples.rank() != 2) throw UsageError("dataset '" + name + "': examples must be N x D");
    if (examples.dim(0) != labels.size())
        throw UsageError("dataset '" + name + "': " + std::to_string(examples.dim(0)) + " rows but " +
                         std::to_string(labels.size()) + " labels");
    if (num_classes < 1) throw UsageError("dataset '" + name + "': num_classes must be positive");
    for (int l : labels)
        if (l < 0 || l >= num_classes)
            throw UsageError("dataset '" + name + "': label " + std::to_string(l) + " out of range");
    if (!example_shape.empty() && shape_numel(example_shape) != examples.dim(1))
        throw UsageError("dataset '" + name + "': example shape " + shape_str(example_shape) +
                         " does not match D=" + std::to_string(examples.dim(1)));
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
    if (a.dims() != b.dims() || a.num_classes != b.num_classes)
        throw DimensionError("concat: datasets disagree on dims or class count");
    LabeledDataset out = a;
    std::vector<double> v(a.examples.values());
    v.insert(v.end(), b.examples.values().begin(), b.examples.values().end());
    out.examples = Tensor(Shape{a.size() + b.size(), a.dims()}, std::move(v));
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    return out;
}

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::string& what) {
    if (offset + 4 > bytes.size())
        throw FormatError(what + ": truncated header at byte offset " + std::to_string(offset));
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
    return v;
}

void put_be32(std::string& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        int num_classes) {
    const std::string img = read_bytes(images);
    const std::string lab = read_bytes(labels);
    const std::string iname = images.filename().string();
    const std::string lname = labels.filename().string();

    if (const auto magic = read_be32(img, 0, iname); magic != 0x00000803)
        throw FormatError(iname + ": bad image magic at byte offset 0");
    if (const auto magic = read_be32(lab, 0, lname); magic != 0x00000801)
        throw FormatError(lname + ": bad label magic at byte offset 0");
    const std::size_t n = read_be32(img, 4, iname);
    const std::size_t rows = read_be32(img, 8, iname);
    const std::size_t cols = read_be32(img, 12, iname);
    const std::size_t nl = read_be32(lab, 4, lname);
    if (n != nl)
        throw FormatError(lname + ": label count " + std::to_string(nl) + " at byte offset 4 does not match " +
                          std::to_string(n) + " images");
    const std::size_t d = rows * cols;
    if (img.size() < 16 + n * d)
        throw FormatError(iname + ": truncated pixel data at byte offset " + std::to_string(img.size()));
    if (lab.size() < 8 + n)
        throw FormatError(lname + ": truncated label data at byte offset " + std::to_string(lab.size()));

    LabeledDataset ds;
    ds.name = iname;
    ds.num_classes = num_classes;
    ds.example_shape = Shape{1, rows, cols};
    ds.examples = Tensor(Shape{n, d});
    for (std::size_t i = 0; i < n * d; ++i)
        ds.examples[i] = static_cast<unsigned char>(img[16 + i]) / 255.0;
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int l = static_cast<unsigned char>(lab[8 + i]);
        if (l >= num_classes)
            throw FormatError(lname + ": label " + std::to_string(l) + " at byte offset " +
                              std::to_string(8 + i) + " exceeds class count");
        ds.labels[i] = l;
    }
    return ds;
}

void save_idx(const LabeledDataset& ds, std::size_t rows, std::size_t cols,
              const std::filesystem::path& images, const std::filesystem::path& labels) {
    if (rows * cols != ds.dims()) throw DimensionError("save_idx: rows*cols != D");
    std::string img, lab;
    put_be32(img, 0x00000803);
    put_be32(img, static_cast<std::uint32_t>(ds.size()));
    put_be32(img, static_cast<std::uint32_t>(rows));
    put_be32(img, static_cast<std::uint32_t>(cols));
    for (double v : ds.examples.data())
        img.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    put_be32(lab, 0x00000801);
    put_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (int l : ds.labels) lab.push_back(static_cast<char>(l));
    write_file_atomic(images, img);
    write_file_atomic(labels, lab);
}

namespace {
constexpr std::size_t kCifarPixels = 3 * 32 * 32;
constexpr std::size_t kCifarRecord = kCifarPixels + 1;
}  // namespace

LabeledDataset load_cifar10_bin(const std::filesystem::path& path) {
    const std::string bytes = read_bytes(path);
    if (bytes.size() % kCifarRecord != 0)
        throw FormatError(path.filename().string() + ": length " + std::to_string(bytes.size()) +
                          " is not a multiple of 3073 (trailing bytes at offset " +
                          std::to_string(bytes.size() - bytes.size() % kCifarRecord) + ")");
    const std::size_t n = bytes.size() / kCifarRecord;
    LabeledDataset ds;
    ds.name = path.filename().string();
    ds.num_classes = 10;
    ds.example_shape = Shape{3, 32, 32};
    ds.examples = Tensor(Shape{n, kCifarPixels});
    ds.labels.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t off = r * kCifarRecord;
        const int l = static_cast<unsigned char>(bytes[off]);
        if (l >= 10)
            throw FormatError(ds.name + ": label byte " + std::to_string(l) + " at offset " + std::to_string(off));
        ds.labels[r] = l;
        for (std::size_t j = 0; j < kCifarPixels; ++j)
            ds.examples[r * kCifarPixels + j] = static_cast<unsigned char>(bytes[off + 1 + j]) / 255.0;
    }
    return ds;
}

void save_cifar10_bin(const LabeledDataset& ds, const std::filesystem::path& path) {
    if (ds.dims() != kCifarPixels && ds.size() != 0) throw DimensionError("save_cifar10_bin: D must be 3072");
    std::string out;
    out.reserve(ds.size() * kCifarRecord);
    for (std::size_t r = 0; r < ds.size(); ++r) {
        out.push_back(static_cast<char>(ds.labels[r]));
        for (double v : ds.examples.row(r))
            out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
    write_file_atomic(path, out);
}

LabeledDataset gen_blobs_split(const BlobSpec& spec, std::uint64_t draw_seed) {
    if (spec.classes < 2) throw UsageError("gen_blobs: need at least 2 classes");
    if (spec.dims < 2) throw UsageError("gen_blobs: need at least 2 dims");
    if (spec.spread < 0.0) throw UsageError("gen_blobs: negative spread");
    const auto k = static_cast<std::size_t>(spec.classes);
    const std::size_t d = spec.dims;

    Rng center_rng(derive_seed(spec.seed, 0));
    std::vector<std::vector<double>> centers;
    int attempts = 0;
    while (centers.size() < k) {
        std::vector<double> c(d);
        for (double& x : c) x = center_rng.normal(0.0, spec.center_scale);
        const bool ok = std::all_of(centers.begin(), centers.end(), [&](const std::vector<double>& o) {
            double dist2 = 0;
            for (std::size_t j = 0; j < d; ++j) dist2 += (c[j] - o[j]) * (c[j] - o[j]);
            return std::sqrt(dist2) >= 4.0 * spec.spread;
        });
        if (ok) {
            centers.push_back(std::move(c));
        } else if (++attempts >= 1000) {
            throw ConfigError("gen_blobs: could not place " + std::to_string(k) + " centers 4*spread apart");
        }
    }

    Rng rng(derive_seed(draw_seed, 1));
    LabeledDataset ds;
    ds.name = "blobs";
    ds.num_classes = spec.classes;
    ds.example_shape = Shape{d};
    ds.examples = Tensor(Shape{k * spec.per_class, d});
    ds.labels.resize(k * spec.per_class);
    std::size_t r = 0;
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < spec.per_class; ++i, ++r) {
            ds.labels[r] = static_cast<int>(c);
            for (std::size_t j = 0; j < d; ++j)
                ds.examples[r * d + j] = centers[c][j] + (spec.spread > 0 ? rng.normal(0.0, spec.spread) : 0.0);
        }
    return ds;
}

LabeledDataset gen_blobs(const BlobSpec& spec) { return gen_blobs_split(spec, spec.seed); }

std::pair<LabeledDataset, LabeledDataset> split_per_class(const LabeledDataset& ds, const SplitSpec& spec) {
    if (!(spec.fraction > 0.0) || spec.fraction > 1.0)
        throw UsageError("split_per_class: fraction must be in (0, 1]");
    const auto counts = ds.class_counts();
    if (!ds.labels.empty() && *std::max_element(counts.begin(), counts.end()) <= 1) return {ds, ds};

    Rng rng(derive_seed(spec.seed, 2));
    std::vector<char> chosen(ds.size(), 0);
    auto take = [&](const std::vector<std::size_t>& pool) {
        const auto n = static_cast<std::size_t>(std::ceil(spec.fraction * static_cast<double>(pool.size()) - 1e-12));
        const auto perm = rng.permutation(pool.size());
        for (std::size_t i = 0; i < n; ++i) chosen[pool[perm[i]]] = 1;
    };
    if (spec.per_class) {
        for (int c = 0; c < ds.num_classes; ++c) take(ds.indices_of(c));
    } else {
        std::vector<std::size_t> all(ds.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        take(all);
    }
    std::vector<std::size_t> val, rest;
    for (std::size_t i = 0; i < ds.size(); ++i) (chosen[i] ? val : rest).push_back(i);
    return {ds.subset(val), ds.subset(rest)};
}

LabeledDataset normalize_dataset(const LabeledDataset& ds) {
    if (ds.normalization) throw UsageError("normalize_dataset: '" + ds.name + "' is already normalized");
    const std::size_t n = ds.size(), d = ds.dims();
    if (n == 0) throw UsageError("normalize_dataset: empty dataset");
    Normalization norm{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) norm.mean[j] += ds.examples[i * d + j];
    for (double& m : norm.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double c = ds.examples[i * d + j] - norm.mean[j];
            norm.std[j] += c * c;
        }
    for (double& s : norm.std) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-8);
    return apply_normalization(ds, norm);
}

LabeledDataset apply_normalization(const LabeledDataset& ds, const Normalization& norm) {
    if (ds.normalization) throw UsageError("apply_normalization: '" + ds.name + "' is already normalized");
    const std::size_t d = ds.dims();
    if (norm.mean.size() != d || norm.std.size() != d)
        throw DimensionError("apply_normalization: record has wrong feature count");
    LabeledDataset out = ds;
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
            out.examples[i * d + j] = (ds.examples[i * d + j] - norm.mean[j]) / norm.std[j];
    out.normalization = norm;
    return out;
}

}  // namespace ddcal
