#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "cbm/data.hpp"
#include "cbm/eval.hpp"
#include "cbm/measures.hpp"
#include "cbm/optim.hpp"
#include "cbm/autodiff.hpp"

using namespace cbm;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("synth_image construction and determinism") {
    Sample thin_h = synth_image({0, 0}, 1);
    float mx = 0.0f;
    for (float v : thin_h.image) mx = std::max(mx, v);
    CHECK(mx >= 0.9f);

    Sample again = synth_image({0, 0}, 1);
    CHECK(thin_h.image == again.image);

    Sample other_seed = synth_image({0, 0}, 2);
    CHECK(thin_h.image != other_seed.image);

    // thick stroke has roughly 3x the ink of the thin stroke
    Sample thick_h = synth_image({0, 1}, 1);
    double thin_mass = 0.0, thick_mass = 0.0;
    for (float v : thin_h.image) thin_mass += v > 0.5f;
    for (float v : thick_h.image) thick_mass += v > 0.5f;
    CHECK(thick_mass > 2.0 * thin_mass);
}

TEST_CASE("linear probe separates thickness on balanced samples") {
    CoOccurrenceSpec spec;
    for (int y2 = 0; y2 < 2; ++y2)
        for (int y1 = 0; y1 < 2; ++y1) spec.counts[y2][y1] = 250;
    Dataset ds = sample_dataset(spec, 99);
    auto idx = all_indices(ds);
    Tensor x = images_tensor(ds, idx);
    Tensor y = onehot_labels(ds, idx, /*use_y2=*/true);

    ParamSet p;
    std::mt19937 rng(1);
    p.add("w", glorot_uniform(256, 2, rng));
    p.add("b", Tensor::zeros({2}));
    OptState state;
    for (int step = 0; step < 300; ++step) {
        Tape t;
        Var logits = affine(t.constant(x), t.leaf(&p.at("w")), t.leaf(&p.at("b")));
        t.backward(softmax_cross_entropy(logits, y));
        adam_step(p, state, 0.05f);
    }
    Tape t;
    const Tensor& logits =
        t.value(affine(t.constant(x), t.constant(p.at("w")), t.constant(p.at("b"))));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        int pred = logits.at(i, 1) > logits.at(i, 0) ? 1 : 0;
        correct += pred == ds.samples[i].labels.y2;
    }
    CHECK(static_cast<double>(correct) / ds.size() >= 0.99);
}

TEST_CASE("sample_dataset realizes spec exactly") {
    CoOccurrenceSpec full;  // full-scale counts
    full.counts = {{{9264, 488}, {488, 9264}}};
    CHECK(full.diag_fraction() == doctest::Approx(0.9499).epsilon(1e-3));

    CoOccurrenceSpec desk;
    desk.counts = {{{950, 50}, {50, 950}}};
    Dataset ds = sample_dataset(desk, 7);
    CHECK(ds.size() == 2000);
    auto c = ds.cell_counts();
    CHECK(c[0][0] == 950);
    CHECK(c[0][1] == 50);
    CHECK(c[1][0] == 50);
    CHECK(c[1][1] == 950);
    CHECK(ds.diag_fraction() == doctest::Approx(0.95));

    CoOccurrenceSpec zero_cell;
    zero_cell.counts = {{{10, 0}, {5, 5}}};
    Dataset z = sample_dataset(zero_cell, 7);
    CHECK(z.cell_counts()[0][1] == 0);
}

TEST_CASE("dataset generation is deterministic given spec and seed") {
    CoOccurrenceSpec spec;
    spec.counts = {{{20, 5}, {5, 20}}};
    Dataset a = sample_dataset(spec, 42);
    Dataset b = sample_dataset(spec, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.samples[i].image == b.samples[i].image);
        CHECK(a.samples[i].id == b.samples[i].id);
    }
}

TEST_CASE("empirical label correlation of the 95/5 design is 0.90") {
    CoOccurrenceSpec desk;
    desk.counts = {{{950, 50}, {50, 950}}};
    Dataset ds = sample_dataset(desk, 3);
    double my1 = 0.0, my2 = 0.0;
    for (const auto& s : ds.samples) {
        my1 += s.labels.y1;
        my2 += s.labels.y2;
    }
    my1 /= ds.size();
    my2 /= ds.size();
    double cov = 0.0, v1 = 0.0, v2 = 0.0;
    for (const auto& s : ds.samples) {
        cov += (s.labels.y1 - my1) * (s.labels.y2 - my2);
        v1 += (s.labels.y1 - my1) * (s.labels.y1 - my1);
        v2 += (s.labels.y2 - my2) * (s.labels.y2 - my2);
    }
    CHECK(cov / std::sqrt(v1 * v2) == doctest::Approx(0.90).epsilon(0.0012));
}

TEST_CASE("make_split_bundle: complements, balance, disjoint ids") {
    CoOccurrenceSpec desk;
    desk.counts = {{{950, 50}, {50, 950}}};
    SplitBundle b = make_split_bundle(desk, 0.2, 800, 800, 5);

    CHECK(b.train.diag_fraction() == doctest::Approx(0.95));
    CHECK(b.validation.diag_fraction() == doctest::Approx(0.95));
    CHECK(b.inverted.diag_fraction() == doctest::Approx(0.05));
    auto bal = b.balanced.cell_counts();
    for (int y2 = 0; y2 < 2; ++y2)
        for (int y1 = 0; y1 < 2; ++y1) CHECK(bal[y2][y1] == 200);

    std::set<std::uint64_t> ids;
    std::size_t total = 0;
    for (const Dataset* ds : {&b.train, &b.validation, &b.inverted, &b.balanced}) {
        total += ds->size();
        for (const auto& s : ds->samples) ids.insert(s.id);
    }
    CHECK(ids.size() == total);

    CHECK_THROWS_AS(make_split_bundle(desk, 0.0, 800, 800, 5), std::invalid_argument);
    CHECK_THROWS_AS(make_split_bundle(desk, 0.2, 800, 801, 5), std::invalid_argument);
}

TEST_CASE("balanced split labels are uncorrelated (dcor on one-hot labels)") {
    CoOccurrenceSpec desk;
    desk.counts = {{{950, 50}, {50, 950}}};
    SplitBundle b = make_split_bundle(desk, 0.2, 800, 800, 11);
    auto idx = all_indices(b.balanced);
    Tensor y1 = onehot_labels(b.balanced, idx, false);
    Tensor y2 = onehot_labels(b.balanced, idx, true);
    CHECK(dcor(y1, y2) < 0.05);
}

TEST_CASE("rebalance_oversample equalizes cells and keeps originals") {
    CoOccurrenceSpec desk;
    desk.counts = {{{950, 50}, {50, 950}}};
    Dataset ds = sample_dataset(desk, 21);
    Dataset r = rebalance_oversample(ds, 1);
    CHECK(r.size() == 3800);
    auto c = r.cell_counts();
    for (int y2 = 0; y2 < 2; ++y2)
        for (int y1 = 0; y1 < 2; ++y1) CHECK(c[y2][y1] == 950);

    // originals all retained
    std::set<std::uint64_t> orig_ids, out_ids;
    for (const auto& s : ds.samples) orig_ids.insert(s.id);
    for (const auto& s : r.samples) out_ids.insert(s.id);
    CHECK(orig_ids == out_ids);

    // duplicates only from the off-diagonal cells
    std::map<std::uint64_t, int> mult;
    for (const auto& s : r.samples) ++mult[s.id];
    for (const auto& s : ds.samples) {
        bool diag = s.labels.y1 == s.labels.y2;
        if (diag) CHECK(mult[s.id] == 1);
    }

    // already balanced input: identical up to multiplicity 1
    CoOccurrenceSpec eq;
    eq.counts = {{{25, 25}, {25, 25}}};
    Dataset balanced = sample_dataset(eq, 13);
    Dataset r2 = rebalance_oversample(balanced, 5);
    CHECK(r2.size() == balanced.size());

    CoOccurrenceSpec holed;
    holed.counts = {{{10, 0}, {5, 5}}};
    Dataset h = sample_dataset(holed, 17);
    CHECK_THROWS_AS(rebalance_oversample(h, 0), std::invalid_argument);
}

TEST_CASE("dataset save/load round trip") {
    CoOccurrenceSpec spec;
    spec.counts = {{{8, 2}, {2, 8}}};
    Dataset ds = sample_dataset(spec, 33);
    std::string path = temp_path("cbm_test_roundtrip.cbd");
    save_dataset(ds, path);
    Dataset back = load_dataset(path);
    REQUIRE(back.size() == ds.size());
    CHECK(back.height == ds.height);
    CHECK(back.width == ds.width);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.samples[i].image == ds.samples[i].image);
        CHECK(back.samples[i].labels.y1 == ds.samples[i].labels.y1);
        CHECK(back.samples[i].labels.y2 == ds.samples[i].labels.y2);
    }
    std::remove(path.c_str());
}

TEST_CASE("empty dataset file and truncation handling") {
    Dataset empty;
    std::string path = temp_path("cbm_test_empty.cbd");
    save_dataset(empty, path);
    Dataset back = load_dataset(path);
    CHECK(back.size() == 0);

    // truncate mid-sample
    CoOccurrenceSpec spec;
    spec.counts = {{{2, 0}, {0, 2}}};
    Dataset ds = sample_dataset(spec, 1);
    save_dataset(ds, path);
    auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 16);
    CHECK_THROWS_AS(load_dataset(path), std::runtime_error);

    std::ofstream bad(path, std::ios::binary);
    bad << "NOPE";
    bad.close();
    CHECK_THROWS_AS(load_dataset(path), std::runtime_error);
    std::remove(path.c_str());
}
