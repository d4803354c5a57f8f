#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "cbm/model.hpp"
#include "fd_oracle.hpp"

using namespace cbm;

namespace {

Tensor random_input(std::size_t n, std::size_t d, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    Tensor t = Tensor::zeros({n, d});
    for (auto& v : t.data) v = dist(rng);
    return t;
}

EncoderSpec small_spec() {
    EncoderSpec s;
    s.input_dim = 16;
    s.hidden = {8};
    s.d1 = 2;
    s.d2 = 2;
    return s;
}

}  // namespace

TEST_CASE("encode: determinism, shapes, zero final layer") {
    EncoderSpec spec = small_spec();
    ParamSet p = init_model(spec, 1);
    Tensor x = random_input(5, 16, 2);

    Tape t1, t2;
    LatentVars z1 = encode(t1, p, spec, x, false);
    LatentVars z2 = encode(t2, p, spec, x, false);
    CHECK(t1.value(z1.z1).data == t2.value(z2.z1).data);
    CHECK(t1.value(z1.z1).rows() == 5);
    CHECK(t1.value(z1.z1).cols() == 2);
    CHECK(t1.value(z1.z2).cols() == 2);

    for (auto& v : p.at("enc.wz").data) v = 0.0f;
    Tape t3;
    LatentVars z3 = encode(t3, p, spec, x, false);
    for (float v : t3.value(z3.z1).data) CHECK(v == 0.0f);

    Tape t4;
    CHECK_THROWS_AS(encode(t4, p, spec, random_input(3, 7, 1), false),
                    std::invalid_argument);
}

TEST_CASE("shared mode yields one latent of full width") {
    EncoderSpec spec = small_spec();
    spec.shared = true;
    ParamSet p = init_model(spec, 3);
    Tensor x = random_input(4, 16, 5);
    Tape t;
    LatentVars z = encode(t, p, spec, x, false);
    CHECK(t.value(z.z1).cols() == 4);
    CHECK(z.z1.id == z.z2.id);
}

TEST_CASE("head_logits shape and zero-weight uniformity") {
    EncoderSpec spec = small_spec();
    ParamSet p = init_model(spec, 7);
    Tensor z = random_input(6, 2, 9);
    Tape t;
    Var logits = head_logits(t, p, 1, t.constant(z), false);
    CHECK(t.value(logits).rows() == 6);
    CHECK(t.value(logits).cols() == 2);

    for (auto& v : p.at("head2.w").data) v = 0.0f;
    Tape t2;
    Var l2 = head_logits(t2, p, 2, t2.constant(z), false);
    Tensor y = Tensor::zeros({6, 2});
    for (int i = 0; i < 6; ++i) y.at(i, 0) = 1.0f;
    CHECK(t2.value(softmax_cross_entropy(l2, y)).data[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("identity-like head on separable latents is perfect") {
    // z1 column 0 carries the label sign
    Tensor z = Tensor::zeros({10, 2});
    Tensor y = Tensor::zeros({10, 2});
    for (int i = 0; i < 10; ++i) {
        int lab = i % 2;
        z.at(i, 0) = lab ? 2.0f : -2.0f;
        y.at(i, lab) = 1.0f;
    }
    ParamSet p;
    p.add("head1.w", Tensor({2, 2}, {-1, 1, 0, 0}));
    p.add("head1.b", Tensor::zeros({2}));
    Tape t;
    const Tensor& logits = t.value(head_logits(t, p, 1, t.constant(z), false));
    for (int i = 0; i < 10; ++i) {
        int pred = logits.at(i, 1) > logits.at(i, 0) ? 1 : 0;
        CHECK(pred == i % 2);
    }
}

TEST_CASE("loss_subspace_ce values and symmetry") {
    EncoderSpec spec = small_spec();
    ParamSet p = init_model(spec, 11);
    for (auto& v : p.at("head1.w").data) v = 0.0f;
    for (auto& v : p.at("head2.w").data) v = 0.0f;

    Tensor z1 = random_input(4, 2, 13);
    Tensor z2 = random_input(4, 2, 14);
    Tensor y1 = Tensor::zeros({4, 2});
    Tensor y2 = Tensor::zeros({4, 2});
    for (int i = 0; i < 4; ++i) {
        y1.at(i, i % 2) = 1.0f;
        y2.at(i, (i + 1) % 2) = 1.0f;
    }
    Tape t;
    LatentVars z{t.constant(z1), t.constant(z2)};
    CHECK(t.value(loss_subspace_ce(t, p, z, y1, y2, false)).data[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));

    // head1 perfect, head2 uniform -> 1/2 ln 2
    p.at("head1.w") = Tensor({2, 2}, {-10, 10, 0, 0});
    Tensor zsep = Tensor::zeros({4, 2});
    for (int i = 0; i < 4; ++i) zsep.at(i, 0) = (i % 2) ? 5.0f : -5.0f;
    Tape t2;
    LatentVars zv{t2.constant(zsep), t2.constant(z2)};
    CHECK(t2.value(loss_subspace_ce(t2, p, zv, y1, y2, false)).data[0] ==
          doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-3));

    // structural symmetry under swapping (z1,y1) <-> (z2,y2) with swapped heads
    ParamSet q = init_model(spec, 17);
    ParamSet q_swapped;
    q_swapped.add("head1.w", q.at("head2.w"));
    q_swapped.add("head1.b", q.at("head2.b"));
    q_swapped.add("head2.w", q.at("head1.w"));
    q_swapped.add("head2.b", q.at("head1.b"));
    Tape t3, t4;
    LatentVars za{t3.constant(z1), t3.constant(z2)};
    LatentVars zb{t4.constant(z2), t4.constant(z1)};
    CHECK(t3.value(loss_subspace_ce(t3, q, za, y1, y2, false)).data[0] ==
          doctest::Approx(
              t4.value(loss_subspace_ce(t4, q_swapped, zb, y2, y1, false)).data[0]));
}

TEST_CASE("loss_penalized_dcor: lambda=0 equals plain CE, monotone in lambda") {
    EncoderSpec spec = small_spec();
    ParamSet p = init_model(spec, 19);
    Tensor x = random_input(8, 16, 21);
    Tensor y1 = Tensor::zeros({8, 2});
    Tensor y2 = Tensor::zeros({8, 2});
    for (int i = 0; i < 8; ++i) {
        y1.at(i, i % 2) = 1.0f;
        y2.at(i, (i / 2) % 2) = 1.0f;
    }
    Tape t;
    LatentVars z = encode(t, p, spec, x, false);
    float plain = t.value(loss_subspace_ce(t, p, z, y1, y2, false)).data[0];
    float pen0 = t.value(loss_penalized_dcor(t, p, z, y1, y2, 0.0f)).data[0];
    CHECK(plain == pen0);  // bitwise

    Tape t2;
    LatentVars z2 = encode(t2, p, spec, x, false);
    float pen1 = t2.value(loss_penalized_dcor(t2, p, z2, y1, y2, 0.5f)).data[0];
    float pen2 = t2.value(loss_penalized_dcor(t2, p, z2, y1, y2, 1.0f)).data[0];
    CHECK(pen1 > plain);
    CHECK(pen2 > pen1);
}

TEST_CASE("adversarial gradient decomposition: g_enc == g_CE1 - lam*g_CE2") {
    EncoderSpec spec = small_spec();
    spec.shared = true;
    const float lam = 0.7f;
    Tensor x = random_input(6, 16, 23);
    Tensor y1 = Tensor::zeros({6, 2});
    Tensor y2 = Tensor::zeros({6, 2});
    for (int i = 0; i < 6; ++i) {
        y1.at(i, i % 2) = 1.0f;
        y2.at(i, (i / 3) % 2) = 1.0f;
    }

    ParamSet p = init_model(spec, 29);
    Tape t;
    LatentVars z = encode(t, p, spec, x);
    Var loss = loss_adversarial(t, p, spec, z.z1, y1, y2, lam);
    t.backward(loss);
    std::vector<float> g_comb = p.at("enc.w0").grad;
    p.clear_grads();

    // branch 1: CE1 alone
    ParamSet p1 = init_model(spec, 29);
    Tape t1;
    LatentVars z1 = encode(t1, p1, spec, x);
    t1.backward(softmax_cross_entropy(head_logits(t1, p1, 1, z1.z1), y1));
    std::vector<float> g1 = p1.at("enc.w0").grad;

    // branch 2: CE2 alone (no reversal)
    ParamSet p2 = init_model(spec, 29);
    Tape t2;
    LatentVars z2 = encode(t2, p2, spec, x);
    t2.backward(softmax_cross_entropy(head_logits(t2, p2, 2, z2.z1), y2));
    std::vector<float> g2 = p2.at("enc.w0").grad;

    for (std::size_t i = 0; i < g_comb.size(); ++i)
        CHECK(std::abs(g_comb[i] - (g1[i] - lam * g2[i])) < 1e-6f);
}

TEST_CASE("adversarial: forward value independent of lambda; lam=0 still trains head2") {
    EncoderSpec spec = small_spec();
    spec.shared = true;
    ParamSet p = init_model(spec, 31);
    Tensor x = random_input(4, 16, 33);
    Tensor y1 = Tensor::zeros({4, 2});
    Tensor y2 = Tensor::zeros({4, 2});
    for (int i = 0; i < 4; ++i) {
        y1.at(i, i % 2) = 1.0f;
        y2.at(i, (i + 1) % 2) = 1.0f;
    }
    Tape ta, tb;
    LatentVars za = encode(ta, p, spec, x, false);
    LatentVars zb = encode(tb, p, spec, x, false);
    float va = ta.value(loss_adversarial(ta, p, spec, za.z1, y1, y2, 0.0f)).data[0];
    float vb = tb.value(loss_adversarial(tb, p, spec, zb.z1, y1, y2, 5.0f)).data[0];
    CHECK(va == vb);

    // lam=0: encoder grads come from head1 only, but head2 grads are nonzero
    ParamSet q = init_model(spec, 31);
    Tape t;
    LatentVars z = encode(t, q, spec, x);
    t.backward(loss_adversarial(t, q, spec, z.z1, y1, y2, 0.0f));
    bool head2_nonzero = false;
    for (float g : q.at("head2.w").grad) head2_nonzero |= g != 0.0f;
    CHECK(head2_nonzero);

    // split-mode encoder is a configuration error
    EncoderSpec split = small_spec();
    ParamSet r = init_model(split, 31);
    Tape t5;
    LatentVars zs = encode(t5, r, split, x, false);
    CHECK_THROWS_AS(loss_adversarial(t5, r, split, zs.z1, y1, y2, 1.0f),
                    std::invalid_argument);
}

TEST_CASE("split mode: head1 gradient touches only the z1 slice") {
    EncoderSpec spec = small_spec();
    ParamSet p = init_model(spec, 37);
    Tensor x = random_input(4, 16, 39);
    Tensor y1 = Tensor::zeros({4, 2});
    for (int i = 0; i < 4; ++i) y1.at(i, i % 2) = 1.0f;

    Tape t;
    LatentVars z = encode(t, p, spec, x);
    t.backward(softmax_cross_entropy(head_logits(t, p, 1, z.z1), y1));
    // enc.wz columns: first d1 feed z1, last d2 feed z2
    const Tensor& wz = p.at("enc.wz");
    for (std::size_t r = 0; r < wz.rows(); ++r) {
        for (std::size_t c = 2; c < 4; ++c) CHECK(wz.grad[r * 4 + c] == 0.0f);
        // z1 columns generally receive gradient
    }
    bool any = false;
    for (std::size_t r = 0; r < wz.rows(); ++r)
        for (std::size_t c = 0; c < 2; ++c) any |= wz.grad[r * 4 + c] != 0.0f;
    CHECK(any);
}

TEST_CASE("grl_lambda_schedule") {
    CHECK(grl_lambda_schedule(0.0f, 1.0f, 10.0f) == doctest::Approx(0.0f));
    CHECK(grl_lambda_schedule(1.0f, 1.0f, 10.0f) == doctest::Approx(1.0f).epsilon(1e-3));
    CHECK(grl_lambda_schedule(0.5f, 0.4f, 4.0f) > 0.0f);  // alpha=0.4, gamma=4 valid
    CHECK_THROWS_AS(grl_lambda_schedule(-0.1f, 1.0f, 10.0f), std::domain_error);
    CHECK_THROWS_AS(grl_lambda_schedule(1.1f, 1.0f, 10.0f), std::domain_error);
    // monotone increasing, bounded by alpha on [0,1)
    float prev = -1.0f;
    for (float p = 0.0f; p < 1.0f; p += 0.05f) {
        float v = grl_lambda_schedule(p, 0.4f, 4.0f);
        CHECK(v >= 0.0f);
        CHECK(v < 0.4f);
        CHECK(v > prev);
        prev = v;
    }
}

TEST_CASE("checkpoint round trip and error paths") {
    EncoderSpec spec = small_spec();
    ParamSet p = init_model(spec, 41);
    auto path = (std::filesystem::temp_directory_path() / "cbm_test_ckpt.cbm").string();
    save_checkpoint(p, path);
    ParamSet back = load_checkpoint(path);
    REQUIRE(back.size() == p.size());
    auto it1 = p.begin();
    auto it2 = back.begin();
    for (; it1 != p.end(); ++it1, ++it2) {
        CHECK(it1->first == it2->first);  // order preserved
        CHECK(it1->second.shape == it2->second.shape);
        CHECK(it1->second.data == it2->second.data);
    }

    std::filesystem::resize_file(path, 10);
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::ofstream bad(path, std::ios::binary);
    bad << "XXXX";
    bad.close();
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::remove(path.c_str());
}
