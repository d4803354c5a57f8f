#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace cbm {

struct FactorPair {
    std::uint8_t y1 = 0;  // primary task
    std::uint8_t y2 = 0;  // confounder
};

struct Sample {
    std::vector<float> image;  // h*w row-major, [0,1]
    FactorPair labels;
    std::uint64_t id = 0;
};

struct ImageParams {
    std::size_t height = 16;
    std::size_t width = 16;
    float noise = 0.1f;
};

struct Dataset {
    std::size_t height = 16;
    std::size_t width = 16;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }

    // counts[y2][y1]
    std::array<std::array<std::size_t, 2>, 2> cell_counts() const {
        std::array<std::array<std::size_t, 2>, 2> c{{{0, 0}, {0, 0}}};
        for (const auto& s : samples) ++c[s.labels.y2][s.labels.y1];
        return c;
    }

    double diag_fraction() const {
        auto c = cell_counts();
        std::size_t total = c[0][0] + c[0][1] + c[1][0] + c[1][1];
        return total == 0 ? 0.0 : static_cast<double>(c[0][0] + c[1][1]) / total;
    }
};

// 2x2 label co-occurrence counts, counts[y2][y1].
struct CoOccurrenceSpec {
    std::array<std::array<std::size_t, 2>, 2> counts{{{0, 0}, {0, 0}}};

    std::size_t total() const {
        return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
    }
    double diag_fraction() const {
        return static_cast<double>(counts[0][0] + counts[1][1]) / total();
    }
    // y1 columns swapped: the inverted-correlation design.
    CoOccurrenceSpec inverted() const {
        CoOccurrenceSpec s;
        s.counts[0][0] = counts[0][1];
        s.counts[0][1] = counts[0][0];
        s.counts[1][0] = counts[1][1];
        s.counts[1][1] = counts[1][0];
        return s;
    }
};

struct SplitBundle {
    Dataset train;       // strongly correlated
    Dataset validation;  // same correlation, held out
    Dataset inverted;    // correlation reversed
    Dataset balanced;    // no correlation
};

// y1 selects glyph orientation (0: horizontal bar, 1: vertical bar), y2 the
// stroke thickness (0: 1 px, 1: 3 px). Position jitter is +-2 px; additive
// uniform pixel noise in [0, noise], clamped to [0,1].
inline Sample synth_image(FactorPair labels, std::uint64_t noise_seed,
                          const ImageParams& p = {}) {
    std::mt19937 rng(static_cast<std::uint32_t>(mix_seed(noise_seed)));
    std::uniform_int_distribution<int> jitter(-2, 2);
    int jx = jitter(rng), jy = jitter(rng);
    // Bar length varies per sample; a length-3 thick bar is a 3x3 square with
    // no orientation cue, so some thick glyphs are orientation-ambiguous and a
    // classifier can only resolve them through the label co-occurrence.
    static constexpr int kLengths[5] = {3, 4, 4, 5, 6};
    std::uniform_int_distribution<int> len_pick(0, 4);
    int len = kLengths[len_pick(rng)];
    int h = static_cast<int>(p.height), w = static_cast<int>(p.width);
    int thickness = labels.y2 ? 3 : 1;

    std::vector<float> img(p.height * p.width, 0.0f);
    auto put = [&](int r, int c) {
        if (r >= 0 && r < h && c >= 0 && c < w)
            img[static_cast<std::size_t>(r) * p.width + c] = 1.0f;
    };
    int half = (len - 1) / 2;
    if (labels.y1 == 0) {
        int row = h / 2 + jy, cc = w / 2 + jx;
        for (int dr = -(thickness / 2); dr <= thickness / 2; ++dr)
            for (int c = cc - half; c < cc - half + len; ++c) put(row + dr, c);
    } else {
        int col = w / 2 + jx, cr = h / 2 + jy;
        for (int dc = -(thickness / 2); dc <= thickness / 2; ++dc)
            for (int r = cr - half; r < cr - half + len; ++r) put(r, col + dc);
    }
    std::uniform_real_distribution<float> noise(0.0f, p.noise);
    for (auto& v : img) v = std::min(1.0f, std::max(0.0f, v + noise(rng)));

    Sample s;
    s.image = std::move(img);
    s.labels = labels;
    return s;
}

// Realized per-cell counts equal the spec exactly.
inline Dataset sample_dataset(const CoOccurrenceSpec& spec, std::uint64_t seed,
                              const ImageParams& p = {}, std::uint64_t id_base = 0) {
    Dataset ds;
    ds.height = p.height;
    ds.width = p.width;
    std::uint64_t id = id_base;
    for (int y2 = 0; y2 < 2; ++y2)
        for (int y1 = 0; y1 < 2; ++y1)
            for (std::size_t i = 0; i < spec.counts[y2][y1]; ++i) {
                FactorPair labels{static_cast<std::uint8_t>(y1),
                                  static_cast<std::uint8_t>(y2)};
                std::uint64_t s = mix_seed(seed, (static_cast<std::uint64_t>(y2) << 1) | y1, i);
                Sample smp = synth_image(labels, s, p);
                smp.id = id++;
                ds.samples.push_back(std::move(smp));
            }
    std::mt19937 rng(static_cast<std::uint32_t>(mix_seed(seed, 0x5u)));
    std::shuffle(ds.samples.begin(), ds.samples.end(), rng);
    return ds;
}

inline CoOccurrenceSpec scale_spec(const CoOccurrenceSpec& src, std::size_t total) {
    CoOccurrenceSpec out;
    double src_total = static_cast<double>(src.total());
    std::size_t acc = 0;
    for (int y2 = 0; y2 < 2; ++y2)
        for (int y1 = 0; y1 < 2; ++y1) {
            out.counts[y2][y1] = static_cast<std::size_t>(
                std::llround(total * src.counts[y2][y1] / src_total));
            acc += out.counts[y2][y1];
        }
    if (acc != total)
        throw std::invalid_argument("scale_spec: counts do not divide evenly");
    return out;
}

// train + validation share the correlated spec; inverted swaps the y1
// columns; balanced has four equal cells. Sample ids are disjoint.
inline SplitBundle make_split_bundle(const CoOccurrenceSpec& train_spec,
                                     double val_fraction, std::size_t inverted_total,
                                     std::size_t balanced_total, std::uint64_t seed,
                                     const ImageParams& p = {}) {
    if (val_fraction <= 0.0 || val_fraction >= 1.0)
        throw std::invalid_argument("make_split_bundle: val_fraction must be in (0,1)");
    if (balanced_total % 4 != 0)
        throw std::invalid_argument("make_split_bundle: balanced_total must be divisible by 4");

    CoOccurrenceSpec val_spec;
    for (int y2 = 0; y2 < 2; ++y2)
        for (int y1 = 0; y1 < 2; ++y1)
            val_spec.counts[y2][y1] = static_cast<std::size_t>(
                std::llround(val_fraction * train_spec.counts[y2][y1]));
    if (val_spec.total() == 0)
        throw std::invalid_argument("make_split_bundle: validation split is empty");

    CoOccurrenceSpec inv_spec = scale_spec(train_spec.inverted(), inverted_total);
    CoOccurrenceSpec bal_spec;
    for (int y2 = 0; y2 < 2; ++y2)
        for (int y1 = 0; y1 < 2; ++y1) bal_spec.counts[y2][y1] = balanced_total / 4;

    SplitBundle b;
    std::uint64_t id = 0;
    b.train = sample_dataset(train_spec, mix_seed(seed, 1), p, id);
    id += b.train.size();
    b.validation = sample_dataset(val_spec, mix_seed(seed, 2), p, id);
    id += b.validation.size();
    b.inverted = sample_dataset(inv_spec, mix_seed(seed, 3), p, id);
    id += b.inverted.size();
    b.balanced = sample_dataset(bal_spec, mix_seed(seed, 4), p, id);
    return b;
}

// Every cell is raised to the maximum original cell count by drawing with
// replacement from that cell; originals are all retained, ids unchanged.
inline Dataset rebalance_oversample(const Dataset& train, std::uint64_t seed) {
    auto counts = train.cell_counts();
    std::size_t max_count = 0;
    for (int y2 = 0; y2 < 2; ++y2)
        for (int y1 = 0; y1 < 2; ++y1) {
            if (counts[y2][y1] == 0)
                throw std::invalid_argument("rebalance_oversample: empty cell");
            max_count = std::max(max_count, counts[y2][y1]);
        }
    std::array<std::array<std::vector<std::size_t>, 2>, 2> by_cell;
    for (std::size_t i = 0; i < train.size(); ++i)
        by_cell[train.samples[i].labels.y2][train.samples[i].labels.y1].push_back(i);

    Dataset out;
    out.height = train.height;
    out.width = train.width;
    out.samples = train.samples;
    std::mt19937 rng(static_cast<std::uint32_t>(mix_seed(seed, 0x6u)));
    for (int y2 = 0; y2 < 2; ++y2)
        for (int y1 = 0; y1 < 2; ++y1) {
            const auto& idx = by_cell[y2][y1];
            std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
            for (std::size_t i = counts[y2][y1]; i < max_count; ++i)
                out.samples.push_back(train.samples[idx[pick(rng)]]);
        }
    return out;
}

namespace detail {
inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <typename T>
inline void write_le(std::ostream& os, T v) {
    write_bytes(os, &v, sizeof(T));  // little-endian host assumed
}
template <typename T>
inline T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("dataset file: truncated");
    return v;
}
}  // namespace detail

// "CBD1": u32 count, u16 height, u16 width, then per sample
// u8 y1, u8 y2, h*w little-endian float32.
inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
    os.write("CBD1", 4);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.size()));
    detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(ds.height));
    detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(ds.width));
    for (const auto& s : ds.samples) {
        detail::write_le<std::uint8_t>(os, s.labels.y1);
        detail::write_le<std::uint8_t>(os, s.labels.y2);
        detail::write_bytes(os, s.image.data(), s.image.size() * sizeof(float));
    }
    if (!os) throw std::runtime_error("save_dataset: write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CBD1", 4) != 0)
        throw std::runtime_error("load_dataset: bad magic in " + path);
    Dataset ds;
    std::uint32_t count = detail::read_le<std::uint32_t>(is);
    ds.height = detail::read_le<std::uint16_t>(is);
    ds.width = detail::read_le<std::uint16_t>(is);
    ds.samples.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Sample s;
        s.labels.y1 = detail::read_le<std::uint8_t>(is);
        s.labels.y2 = detail::read_le<std::uint8_t>(is);
        s.image.resize(ds.height * ds.width);
        is.read(reinterpret_cast<char*>(s.image.data()),
                static_cast<std::streamsize>(s.image.size() * sizeof(float)));
        if (!is) throw std::runtime_error("load_dataset: truncated file " + path);
        s.id = i;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// Flattened pixel matrix and one-hot label tensors for a set of samples.
inline Tensor images_tensor(const Dataset& ds, const std::vector<std::size_t>& idx) {
    std::size_t dim = ds.height * ds.width;
    Tensor x = Tensor::zeros({idx.size(), dim});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(ds.samples[idx[i]].image.begin(), ds.samples[idx[i]].image.end(),
                  x.data.begin() + static_cast<std::ptrdiff_t>(i * dim));
    return x;
}

inline Tensor onehot_labels(const Dataset& ds, const std::vector<std::size_t>& idx,
                            bool use_y2) {
    Tensor y = Tensor::zeros({idx.size(), 2});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::uint8_t lab = use_y2 ? ds.samples[idx[i]].labels.y2
                                  : ds.samples[idx[i]].labels.y1;
        y.at(i, lab) = 1.0f;
    }
    return y;
}

inline std::vector<std::size_t> all_indices(const Dataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}

}  // namespace cbm
