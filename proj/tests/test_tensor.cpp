#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "gradcheck.hpp"
#include "latsa/parameters.hpp"
#include "latsa/tensor.hpp"

using namespace latsa;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> random_values(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("matmul shapes, identity and error messages") {
    const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor b = Tensor::zeros({3, 4});
    CHECK(matmul(a, b).shape() == std::vector<std::size_t>{2, 4});
    const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Tensor p = matmul(a, eye);
    for (std::size_t i = 0; i < 6; ++i) CHECK(p.values()[i] == a.values()[i]);
    try {
      matmul(a, a);
      FAIL("accepted");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("2x3") != std::string::npos);
    }
  }

  TEST_CASE("masked softmax examples") {
    const std::vector<double> zero(9, 0.0);
    const Tensor s = masked_softmax_rows(Tensor({3, 3}, std::vector<double>(9, 0.7)), zero);
    for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    const std::vector<double> m1{0, 0, -kInf};
    const Tensor s1 = masked_softmax_rows(Tensor({1, 3}, {1, 1, 1}), m1);
    CHECK(s1(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s1(0, 2) == 0.0);

    const std::vector<double> m2{std::log(0.5), 0.0};
    const Tensor s2 = masked_softmax_rows(Tensor({1, 2}, {3, 3}), m2);
    CHECK(s2(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(s2(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

    const std::vector<double> dead{-kInf, -kInf};
    CHECK_THROWS_AS(masked_softmax_rows(Tensor({1, 2}, {0, 0}), dead), std::domain_error);
  }

  TEST_CASE("masked softmax rows sum to one, -inf gets exact zeros, also under dropout") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
      const std::size_t n = 1 + rng.below(10);
      std::vector<double> mask(n * n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) mask[i * n + j] = i == j ? 0.0 : rng.uniform() < 0.4 ? -kInf : std::log(rng.uniform());
      const Tensor scores({n, n}, random_values(rng, n * n));
      for (Mode mode : {Mode::infer, Mode::train}) {
        Rng drop(t);
        const Tensor w = masked_softmax_rows(scores, mask, 0.3, mode, &drop);
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0;
          for (std::size_t j = 0; j < n; ++j) {
            s += w(i, j);
            if (mask[i * n + j] == -kInf) CHECK(w(i, j) == 0.0);
          }
          CHECK(std::abs(s - 1.0) <= 1e-12);
        }
      }
    }
  }

  TEST_CASE("layer norm") {
    const Tensor g({1, 4}, {1, 1, 1, 1}), b({1, 4}, {0.5, 0.5, 0.5, 0.5});
    const Tensor c = layer_norm(Tensor({1, 4}, {3, 3, 3, 3}), g, b);
    for (double v : c.values()) CHECK(v == 0.5);

    const Tensor zb({1, 4}, {0, 0, 0, 0});
    const std::vector<double> unit{1, -1, 1, -1};
    const Tensor u = layer_norm(Tensor({1, 4}, unit), g, zb);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(u.values()[i] - unit[i]) <= 1e-6);

    Rng rng(1);
    const Tensor r = layer_norm(Tensor({1, 64}, random_values(rng, 64)), Tensor({1, 64}, std::vector<double>(64, 1.0)),
                                Tensor::zeros({1, 64}));
    double mean = 0, var = 0;
    for (double v : r.values()) mean += v / 64;
    for (double v : r.values()) var += (v - mean) * (v - mean) / 64;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }

  TEST_CASE("dropout") {
    Rng rng(1);
    const Tensor x({1, 100000}, std::vector<double>(100000, 1.0));
    const Tensor y0 = dropout(x, 0.0, Mode::train, &rng);
    CHECK(y0.node() == x.node());
    const Tensor yi = dropout(x, 0.7, Mode::infer, nullptr);
    CHECK(yi.node() == x.node());
    const Tensor y = dropout(x, 0.5, Mode::train, &rng);
    double mean = 0;
    for (double v : y.values()) mean += v / 100000;
    CHECK(std::abs(mean - 1.0) < 0.02);
    // Same seed, same pattern.
    Rng a(9), b(9);
    const Tensor da = dropout(x, 0.5, Mode::train, &a), db = dropout(x, 0.5, Mode::train, &b);
    CHECK(std::equal(da.values().begin(), da.values().end(), db.values().begin()));
  }

  TEST_CASE("feed forward") {
    Rng rng(2);
    const Tensor x({3, 4}, random_values(rng, 12));
    const Tensor b2({1, 2}, {0.25, -1.0});
    const Tensor zero_ff = feed_forward(x, Tensor::zeros({4, 5}), Tensor::zeros({1, 5}), Tensor::zeros({5, 2}), b2);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(zero_ff(i, 0) == 0.25);
      CHECK(zero_ff(i, 1) == -1.0);
    }
    // Dead ReLU: strongly negative bias.
    const Tensor dead = feed_forward(x, Tensor({4, 5}, random_values(rng, 20)), Tensor({1, 5}, std::vector<double>(5, -100.0)),
                                     Tensor({5, 2}, random_values(rng, 10)), b2);
    CHECK(dead(2, 0) == 0.25);

    const Tensor w1({4, 5}, random_values(rng, 20)), b1({1, 5}, random_values(rng, 5)), w2({5, 2}, random_values(rng, 10));
    const Tensor ff = feed_forward(x, w1, b1, w2, b2);
    for (std::size_t i = 0; i < 3; ++i) {
      double hidden[5];
      for (std::size_t j = 0; j < 5; ++j) {
        double s = b1(0, j);
        for (std::size_t k = 0; k < 4; ++k) s += x(i, k) * w1(k, j);
        hidden[j] = std::max(0.0, s);
      }
      for (std::size_t o = 0; o < 2; ++o) {
        double s = b2(0, o);
        for (std::size_t j = 0; j < 5; ++j) s += hidden[j] * w2(j, o);
        CHECK(std::abs(ff(i, o) - s) <= 1e-12);
      }
    }
  }

  TEST_CASE("backward: sums, unused parameters, shared use, non-scalar") {
    Parameter w("w", {2, 3}, {1, 2, 3, 4, 5, 6}), unused("u", {2}, {0, 0});
    Gradients g = backward(sum(w.var()));
    REQUIRE(g.find(w));
    for (double v : *g.find(w)) CHECK(v == 1.0);
    CHECK(g.find(unused) == nullptr);

    ParameterStore store;
    store.add("a", {2}, {1, 1});
    store.add("b", {2}, {1, 1});
    const Tensor a = store.at("a").var();
    const auto gm = gradient_map(backward(sum(add(a, a))), store);
    for (double v : gm.at("a").values()) CHECK(v == 2.0);
    for (double v : gm.at("b").values()) CHECK(v == 0.0);

    CHECK_THROWS_AS(backward(w.var()), ShapeError);
  }

  TEST_CASE("NoGradGuard stops recording") {
    Parameter w("w", {2}, {1, 2});
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_enabled());
      CHECK_FALSE(sum(w.var()).requires_grad());
    }
    CHECK(grad_enabled());
    CHECK(sum(w.var()).requires_grad());
  }

  TEST_CASE("label-smoothed cross-entropy") {
    const Tensor perfect({1, 3}, {50, 0, 0});
    const std::size_t y[1] = {0};
    const double plain = smoothed_cross_entropy(perfect, y, 0.0).item();
    const double smooth = smoothed_cross_entropy(perfect, y, 0.1).item();
    CHECK(plain < 1e-20);
    CHECK(smooth > plain);
    // Hand value on uniform logits: -log(1/3) regardless of epsilon.
    const Tensor uni({1, 3}, {0, 0, 0});
    CHECK(smoothed_cross_entropy(uni, y, 0.1).item() == doctest::Approx(std::log(3.0)).epsilon(1e-14));
    const auto lp = log_softmax_row(std::vector<double>{1, 2, 3});
    double s = 0;
    for (double v : lp) s += std::exp(v);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
  }

  TEST_CASE("gradient checks, op by op") {
    Rng rng(42);
    ParameterStore store;
    auto& A = store.add("A", {3, 4}, random_values(rng, 12));
    auto& B = store.add("B", {4, 5}, random_values(rng, 20));
    auto& C = store.add("C", {3, 5}, random_values(rng, 15));
    auto& row = store.add("row", {5}, random_values(rng, 5));
    auto& g = store.add("g", {5}, random_values(rng, 5));
    auto& b = store.add("b", {5}, random_values(rng, 5));
    auto& W1 = store.add("W1", {5, 6}, random_values(rng, 30));
    auto& b1 = store.add("b1", {6}, random_values(rng, 6));
    auto& W2 = store.add("W2", {6, 5}, random_values(rng, 30));
    auto& b2 = store.add("b2", {5}, random_values(rng, 5));
    auto& S = store.add("S", {3, 3}, random_values(rng, 9));

    std::vector<double> mask{0, std::log(0.3), -kInf, -kInf, 0, std::log(0.8), std::log(0.5), -kInf, 0};
    const std::size_t ids[4] = {2, 0, 2, 1};
    const std::size_t targets[3] = {1, 4, 0};
    const double wts[2] = {0.3, 0.7};

    const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"matmul", [&] { return sum(mul(matmul(A.var(), B.var()), C.var())); }},
        {"transpose/sub/scale", [&] { return sum(scale(sub(transpose(matmul(A.var(), B.var())), transpose(C.var())), 0.7)); }},
        {"add_row/tanh/sigmoid", [&] { return sum(mul(tanh(add_row(C.var(), row.var())), sigmoid(C.var()))); }},
        {"concat/slice", [&] {
           Tensor cat = concat_cols({C.var(), A.var()});
           Tensor rows = concat_rows({cat, select_row(cat, 1)});
           return sum(mul(slice_cols(rows, 2, 5), slice_cols(rows, 4, 5)));
         }},
        {"relu/mean_rows", [&] { return sum(mul(mean_rows(relu(C.var())), row.var())); }},
        {"weighted_sum", [&] { return sum(mul(weighted_sum({C.var(), tanh(C.var())}, wts), C.var())); }},
        {"gather_rows", [&] { return sum(mul(gather_rows(C.var(), ids), gather_rows(C.var(), ids))); }},
        {"masked_softmax", [&] { return sum(mul(masked_softmax_rows(S.var(), mask), S.var())); }},
        {"layer_norm", [&] { return sum(mul(layer_norm(C.var(), g.var(), b.var()), C.var())); }},
        {"feed_forward", [&] { return sum(mul(feed_forward(C.var(), W1.var(), b1.var(), W2.var(), b2.var()), C.var())); }},
        {"cross_entropy", [&] { return smoothed_cross_entropy(matmul(A.var(), B.var()), targets, 0.1); }},
    };
    for (const auto& [name, f] : cases) {
      Rng pick(7);
      const auto r = gradcheck::check(gradcheck::all(store), f, pick);
      INFO(name << ": " << r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }

  TEST_CASE("checkpoint round-trip is bit-exact") {
    Rng rng(5);
    ParameterStore store;
    store.add_glorot("enc.x", {3, 7}, rng);
    store.add("enc.y", {2}, {std::nextafter(1.0, 2.0), -0.0});
    const std::string path = (std::filesystem::temp_directory_path() / "latsa_test_ckpt.bin").string();
    save_checkpoint(path, store, {{"hello", "world"}});
    const Checkpoint ck = read_checkpoint(path);
    CHECK(ck.manifest["hello"] == "world");
    REQUIRE(ck.params.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(ck.params[i].name() == store[i].name());
      CHECK(ck.params[i].shape() == store[i].shape());
      CHECK(std::memcmp(ck.params[i].value().data(), store[i].value().data(), store[i].numel() * sizeof(double)) == 0);
    }
    ParameterStore other;
    other.add("enc.x", {3, 7}, std::vector<double>(21, 0.0));
    other.add("enc.y", {2}, {0, 0});
    load_checkpoint(path, other);
    CHECK(other[0].value() == store[0].value());
    ParameterStore wrong;
    wrong.add("enc.x", {7, 3}, std::vector<double>(21, 0.0));
    wrong.add("enc.y", {2}, {0, 0});
    CHECK_THROWS(load_checkpoint(path, wrong));
  }

  TEST_CASE("Adam moves against the gradient and clips") {
    ParameterStore store;
    auto& p = store.add("p", {2}, {1.0, -1.0});
    Adam adam;
    Gradients g;
    g.at(p) = {100.0, -100.0};
    adam.step(store, g, 0.1);
    CHECK(p.value()[0] < 1.0);
    CHECK(p.value()[1] > -1.0);
    // First Adam step has magnitude lr regardless of the gradient's scale.
    CHECK(p.value()[0] == doctest::Approx(0.9).epsilon(1e-6));
  }
}
