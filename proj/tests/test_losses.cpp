#include <catch2/catch_amalgamated.hpp>

#include <motionid/grad_check.hpp>
#include <motionid/losses.hpp>
#include <motionid/rng.hpp>

using namespace motionid;

namespace {

TensorPtr random_rows(int t_len, int d, Rng& rng) {
  auto t = Tensor::create({t_len, d});
  for (auto& x : t->values) x = rng.normal();
  return t;
}

BatchEmbeddings random_batch(int n, int m, int t_len, int d, std::uint64_t seed) {
  Rng rng(seed);
  BatchEmbeddings b;
  b.n = n;
  b.m = m;
  for (int i = 0; i < n * m; ++i) b.emb.push_back(random_rows(t_len, d, rng));
  return b;
}

double sqdist(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int k = 0; k < d; ++k) {
    double diff = a[k] - b[k];
    s += diff * diff;
  }
  return s;
}

// Literal similarity: negated temperature-scaled min squared distance of one
// pivot frame against every frame of a sequence.
double sim_oracle(const Tensor& pivot_seq, int t, const Tensor& other, double tau) {
  const int d = pivot_seq.dims[1];
  const double* row = pivot_seq.values.data() + static_cast<std::size_t>(t) * static_cast<std::size_t>(d);
  double best = 1e300;
  for (int u = 0; u < other.dims[0]; ++u)
    best = std::min(best, sqdist(row, other.values.data() + static_cast<std::size_t>(u) * static_cast<std::size_t>(d), d));
  return -best / tau;
}

}  // namespace

TEST_CASE("similarity basics") {
  Rng rng(1);
  auto other = random_rows(6, 4, rng);
  SECTION("sequence containing the pivot itself gives zero") {
    auto pivot = Tensor::create({4});
    for (int k = 0; k < 4; ++k)
      pivot->values[static_cast<std::size_t>(k)] = other->values[static_cast<std::size_t>(2 * 4 + k)];
    REQUIRE(similarity(pivot, other, 0.08)->item() == 0.0);
  }
  SECTION("minimum squared distance equal to the temperature gives -1") {
    auto pivot = Tensor::create({4});
    auto seq = Tensor::create({1, 4});
    seq->values[0] = std::sqrt(0.08);  // distance^2 = 0.08 from the origin
    REQUIRE(similarity(pivot, seq, 0.08)->item() == Catch::Approx(-1.0).margin(1e-12));
  }
  SECTION("appending a far vector never decreases similarity") {
    auto pivot = Tensor::create({4}, 0.1);
    double base = similarity(pivot, other, 0.08)->item();
    auto widened = Tensor::create({7, 4});
    for (std::size_t i = 0; i < other->values.size(); ++i) widened->values[i] = other->values[i];
    for (int k = 0; k < 4; ++k) widened->values[static_cast<std::size_t>(6 * 4 + k)] = 100.0;
    REQUIRE(similarity(pivot, widened, 0.08)->item() >= base);
  }
  SECTION("invariant under temporal permutation of the sequence") {
    auto pivot = Tensor::create({4}, 0.3);
    auto reversed = Tensor::create({6, 4});
    for (int t = 0; t < 6; ++t)
      for (int k = 0; k < 4; ++k)
        reversed->values[static_cast<std::size_t>(t * 4 + k)] =
            other->values[static_cast<std::size_t>((5 - t) * 4 + k)];
    REQUIRE(similarity(pivot, other, 0.08)->item() == similarity(pivot, reversed, 0.08)->item());
  }
  SECTION("argument validation") {
    auto pivot = Tensor::create({4});
    REQUIRE_THROWS_AS(similarity(pivot, other, 0.0), ConfigError);
    REQUIRE_THROWS_AS(similarity(Tensor::create({3}), other, 0.08), ShapeError);
  }
}

TEST_CASE("symmetric batches collapse to the closed-form probability") {
  // All sequences identical: every similarity is 0, so only row counts matter.
  auto one = Tensor::create({3, 5}, 0.4);
  for (auto [n, m] : {std::pair{8, 8}, std::pair{2, 2}, std::pair{3, 4}}) {
    BatchEmbeddings b;
    b.n = n;
    b.m = m;
    for (int i = 0; i < n * m; ++i) b.emb.push_back(one);
    auto bp = batch_probabilities(b, 0.08);
    double expected = static_cast<double>(m - 1) / static_cast<double>((m - 1) + (n - 1) * m);
    for (double p : bp.probabilities()) REQUIRE(p == Catch::Approx(expected).margin(1e-12));
    if (n == 8) REQUIRE(bp.probabilities().front() == Catch::Approx(1.0 / 9.0).margin(1e-12));
  }
}

TEST_CASE("one dominant same-identity match pushes probability toward 1") {
  // Identity 0's two sequences coincide; identity 1 sits far away.
  auto near = Tensor::create({2, 3}, 0.0);
  auto far = Tensor::create({2, 3}, 50.0);
  BatchEmbeddings b;
  b.n = 2;
  b.m = 2;
  b.emb = {near, near, far, far};
  auto bp = batch_probabilities(b, 0.08);
  REQUIRE(bp.probabilities()[0] > 1.0 - 1e-12);
}

TEST_CASE("batch probabilities match a literal double-loop evaluation") {
  auto b = random_batch(2, 2, 4, 5, 99);
  const double tau = 0.08;
  auto bp = batch_probabilities(b, tau);
  auto p = bp.probabilities();
  REQUIRE(bp.count == 4);
  REQUIRE(bp.t == 4);
  std::size_t e = 0;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 2; ++i)
      for (int t = 0; t < 4; ++t, ++e) {
        double num = 0.0, cross = 0.0;
        for (int j = 0; j < 2; ++j)
          if (j != i) num += std::exp(sim_oracle(*b.at(c, i), t, *b.at(c, j), tau));
        for (int k = 0; k < 2; ++k) {
          if (k == c) continue;
          for (int j = 0; j < 2; ++j)
            cross += std::exp(sim_oracle(*b.at(c, i), t, *b.at(k, j), tau));
        }
        double expect = num / (num + cross);
        REQUIRE(p[e] == Catch::Approx(expect).margin(1e-12));
        REQUIRE(p[e] > 0.0);
        REQUIRE(p[e] < 1.0);
      }
}

TEST_CASE("log-space probability pipeline is shift invariant") {
  // Adding a common constant to every similarity row must not change the
  // softmax output: logsumexp(num)+c cancels logsumexp(den)+c.
  Rng rng(5);
  auto r1 = Tensor::create({7});
  auto r2 = Tensor::create({7});
  auto r3 = Tensor::create({7});
  for (auto* r : {&r1, &r2, &r3})
    for (auto& x : (*r)->values) x = -5.0 * rng.uniform01();
  auto log_p = sub(logsumexp_cols(stack_rows({r1})), logsumexp_cols(stack_rows({r1, r2, r3})));
  const double c = 123.25;
  auto s1 = scale(add(r1, Tensor::create({7}, c)), 1.0);
  auto s2 = add(r2, Tensor::create({7}, c));
  auto s3 = add(r3, Tensor::create({7}, c));
  auto log_p_shift = sub(logsumexp_cols(stack_rows({s1})), logsumexp_cols(stack_rows({s1, s2, s3})));
  for (int t = 0; t < 7; ++t)
    REQUIRE(log_p->values[static_cast<std::size_t>(t)] ==
            Catch::Approx(log_p_shift->values[static_cast<std::size_t>(t)]).margin(1e-10));
}

TEST_CASE("batch probability validation") {
  auto b = random_batch(2, 2, 3, 4, 7);
  REQUIRE_THROWS_AS(batch_probabilities(b, -1.0), ConfigError);
  auto one_id = random_batch(1, 2, 3, 4, 8);
  REQUIRE_THROWS_AS(batch_probabilities(one_id, 0.08), ConfigError);
  auto one_vid = random_batch(2, 1, 3, 4, 9);
  REQUIRE_THROWS_AS(batch_probabilities(one_vid, 0.08), ConfigError);
  BatchEmbeddings ragged = b;
  ragged.emb[1] = Tensor::create({5, 4});
  REQUIRE_THROWS_AS(batch_probabilities(ragged, 0.08), ShapeError);
}

TEST_CASE("rec_loss on explicit probabilities") {
  SECTION("all probabilities 1/e sum to the pivot count") {
    auto bp = BatchProbabilities::from_probabilities(std::vector<double>(12, 1.0 / std::exp(1.0)), 3, 4);
    REQUIRE(rec_loss(bp)->item() == Catch::Approx(12.0).margin(1e-12));
  }
  SECTION("probabilities near 1 give a near-zero loss") {
    auto bp = BatchProbabilities::from_probabilities(std::vector<double>(4, 1.0 - 1e-12), 2, 2);
    REQUIRE(rec_loss(bp)->item() == Catch::Approx(0.0).margin(1e-10));
    REQUIRE(rec_loss(bp)->item() >= 0.0);
  }
  SECTION("random probabilities match direct summation") {
    Rng rng(11);
    std::vector<double> p(10);
    for (auto& x : p) x = 0.05 + 0.9 * rng.uniform01();
    auto bp = BatchProbabilities::from_probabilities(p, 5, 2);
    double expect = 0.0;
    for (double x : p) expect -= std::log(x);
    REQUIRE(rec_loss(bp)->item() == Catch::Approx(expect).margin(1e-12));
  }
  SECTION("domain violations") {
    REQUIRE_THROWS_AS(BatchProbabilities::from_probabilities({0.5, 0.0}, 1, 2), DomainError);
    REQUIRE_THROWS_AS(BatchProbabilities::from_probabilities({0.5, 1.0}, 1, 2), DomainError);
    REQUIRE_THROWS_AS(BatchProbabilities::from_probabilities({0.5, 1.5}, 1, 2), DomainError);
    REQUIRE_THROWS_AS(BatchProbabilities::from_probabilities({0.5, -0.1}, 1, 2), DomainError);
    REQUIRE_THROWS_AS(BatchProbabilities::from_probabilities({0.5}, 1, 2), ShapeError);
    BatchProbabilities doctored;
    doctored.count = 1;
    doctored.t = 1;
    doctored.log_p = Tensor::from_values({1}, {0.1});  // log p > 0
    REQUIRE_THROWS_AS(rec_loss(doctored), DomainError);
  }
}

TEST_CASE("identification accuracy") {
  SECTION("well separated identity clusters score 1.0") {
    BatchEmbeddings b;
    b.n = 2;
    b.m = 2;
    Rng rng(13);
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 2; ++i) {
        auto e = Tensor::create({4, 3});
        for (int t = 0; t < 4; ++t)
          for (int k = 0; k < 3; ++k)
            e->values[static_cast<std::size_t>(t * 3 + k)] =
                (c == 0 ? -1.0 : 1.0) + 0.01 * rng.normal();
        b.emb.push_back(e);
      }
    REQUIRE(identification_accuracy(b, 0.08) == 1.0);
  }
  SECTION("identical embeddings tie and score 0.0") {
    auto one = Tensor::create({3, 4}, 0.2);
    BatchEmbeddings b;
    b.n = 2;
    b.m = 2;
    b.emb = {one, one, one, one};
    REQUIRE(identification_accuracy(b, 0.08) == 0.0);
  }
  SECTION("random batch matches an exhaustive comparison oracle") {
    auto b = random_batch(3, 2, 4, 5, 17);
    const double tau = 0.08;
    long hits = 0, total = 0;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 2; ++i)
        for (int t = 0; t < 4; ++t, ++total) {
          double best_same = -1e300, best_other = -1e300;
          for (int j = 0; j < 2; ++j)
            if (j != i) best_same = std::max(best_same, sim_oracle(*b.at(c, i), t, *b.at(c, j), tau));
          for (int k = 0; k < 3; ++k) {
            if (k == c) continue;
            for (int j = 0; j < 2; ++j)
              best_other = std::max(best_other, sim_oracle(*b.at(c, i), t, *b.at(k, j), tau));
          }
          if (best_same > best_other) ++hits;
        }
    double expect = static_cast<double>(hits) / static_cast<double>(total);
    REQUIRE(identification_accuracy(b, tau) == expect);
  }
}

TEST_CASE("cycle loss") {
  GenConfig cfg = compact_gen_config(8, 2);
  cfg.feature_channels = 62;
  auto params = gen_init(cfg, 19);
  Rng rng(20);
  auto x = Tensor::create({5, 62});
  for (auto& v : x->values) v = rng.normal();
  auto mean_c = Tensor::create({62}, 0.3);
  auto mean_i = Tensor::create({62}, -0.2);

  SECTION("identity generator gives exactly zero") {
    REQUIRE(cycle_loss(cfg, params, x, mean_c, mean_i)->item() == 0.0);
  }
  SECTION("constant-offset generator gives T times the squared double step") {
    // Zero exit weights with bias v: each trip adds v, so the round trip
    // deviates by 2v in every frame.
    Rng rng2(21);
    double norm2 = 0.0;
    for (auto& bv : params["exit.b"]->values) {
      bv = 0.1 * rng2.normal();
      norm2 += (2.0 * bv) * (2.0 * bv);
    }
    double loss = cycle_loss(cfg, params, x, mean_c, mean_i)->item();
    REQUIRE(loss == Catch::Approx(5.0 * norm2).epsilon(1e-12));
    REQUIRE(loss >= 0.0);
  }
}

TEST_CASE("adversarial probabilities") {
  const double tau = 0.08;
  SECTION("matches a literal double-loop evaluation") {
    auto real = random_batch(2, 2, 3, 4, 23);
    AdversarialBatch gen;
    Rng rng(24);
    gen.emb = {random_rows(3, 4, rng), random_rows(3, 4, rng)};
    gen.target = {0, 1};
    auto bp = adv_probabilities(gen, real, tau);
    auto p = bp.probabilities();
    std::size_t e = 0;
    for (std::size_t g = 0; g < 2; ++g)
      for (int t = 0; t < 3; ++t, ++e) {
        int c = gen.target[g];
        double num = 0.0, den = 0.0;
        for (int k = 0; k < 2; ++k)
          for (int j = 0; j < 2; ++j) {
            double s = std::exp(sim_oracle(*gen.emb[g], t, *real.at(k, j), tau));
            den += s;
            if (k == c) num += s;
          }
        REQUIRE(p[e] == Catch::Approx(num / den).margin(1e-12));
      }
  }
  SECTION("a generated copy of the target's video far from others passes") {
    auto near = Tensor::create({2, 3}, 0.0);
    auto far = Tensor::create({2, 3}, 50.0);
    BatchEmbeddings real;
    real.n = 2;
    real.m = 2;
    real.emb = {near, near, far, far};
    AdversarialBatch gen;
    gen.emb = {near};
    gen.target = {0};
    auto p = adv_probabilities(gen, real, tau).probabilities();
    REQUIRE(p[0] > 1.0 - 1e-12);
  }
  SECTION("validation") {
    auto real = random_batch(2, 2, 3, 4, 25);
    AdversarialBatch empty;
    REQUIRE_THROWS_AS(adv_probabilities(empty, real, tau), EmptyInputError);
    AdversarialBatch bad;
    Rng rng(26);
    bad.emb = {random_rows(3, 4, rng)};
    bad.target = {5};
    REQUIRE_THROWS_AS(adv_probabilities(bad, real, tau), ShapeError);
    bad.target = {0};
    bad.emb = {random_rows(2, 4, rng)};  // wrong frame count
    REQUIRE_THROWS_AS(adv_probabilities(bad, real, tau), ShapeError);
  }
}

TEST_CASE("adversarial and invisibility losses") {
  SECTION("probability one half gives count times log 2 for both") {
    auto bp = BatchProbabilities::from_probabilities(std::vector<double>(6, 0.5), 2, 3);
    REQUIRE(adv_loss(bp)->item() == Catch::Approx(6.0 * std::log(2.0)).margin(1e-12));
    REQUIRE(inv_loss(bp)->item() == Catch::Approx(6.0 * std::log(2.0)).margin(1e-12));
  }
  SECTION("adv decreases and inv increases in p") {
    auto lo = BatchProbabilities::from_probabilities({0.3}, 1, 1);
    auto hi = BatchProbabilities::from_probabilities({0.6}, 1, 1);
    REQUIRE(adv_loss(hi)->item() < adv_loss(lo)->item());
    REQUIRE(inv_loss(hi)->item() > inv_loss(lo)->item());
  }
  SECTION("random values match direct summation") {
    Rng rng(27);
    std::vector<double> p(8);
    for (auto& x : p) x = 0.05 + 0.9 * rng.uniform01();
    auto bp = BatchProbabilities::from_probabilities(p, 4, 2);
    double adv_expect = 0.0, inv_expect = 0.0;
    for (double x : p) {
      adv_expect -= std::log(x);
      inv_expect -= std::log(1.0 - x);
    }
    REQUIRE(adv_loss(bp)->item() == Catch::Approx(adv_expect).margin(1e-12));
    REQUIRE(inv_loss(bp)->item() == Catch::Approx(inv_expect).margin(1e-10));
    REQUIRE(adv_loss(bp)->item() >= 0.0);
    REQUIRE(inv_loss(bp)->item() >= 0.0);
  }
  SECTION("probability exactly 1 is rejected by inv_loss") {
    BatchProbabilities doctored;
    doctored.count = 1;
    doctored.t = 1;
    doctored.log_p = Tensor::from_values({1}, {0.0});
    REQUIRE_THROWS_AS(inv_loss(doctored), DomainError);
  }
}

TEST_CASE("total losses combine linearly") {
  auto rec = Tensor::scalar(3.0);
  auto inv = Tensor::scalar(2.0);
  REQUIRE(total_tid_loss(rec, inv, 0.001)->item() == Catch::Approx(3.002).margin(1e-15));
  REQUIRE(total_tid_loss(rec, inv, 0.0)->item() == 3.0);
  REQUIRE(total_generator_loss(rec, inv, 1.0)->item() == 5.0);
  REQUIRE(total_generator_loss(rec, inv, 0.0)->item() == 3.0);
  // linear in each term: doubling both inputs doubles the total
  auto rec2 = Tensor::scalar(6.0);
  auto inv2 = Tensor::scalar(4.0);
  REQUIRE(total_tid_loss(rec2, inv2, 0.5)->item() ==
          Catch::Approx(2.0 * total_tid_loss(rec, inv, 0.5)->item()).margin(1e-12));
  REQUIRE_THROWS_AS(total_tid_loss(rec, inv, -0.1), ConfigError);
  REQUIRE_THROWS_AS(total_generator_loss(rec, inv, -1.0), ConfigError);
}

TEST_CASE("gradients of the composite objectives check out") {
  // Tiny networks, N=M=2 batches.
  TidConfig tcfg;
  tcfg.in_channels = 4;
  tcfg.hidden_channels = 8;
  tcfg.out_channels = 6;
  tcfg.blocks = {{3, 1}};
  tcfg.groupnorm_groups = 2;
  auto tid = tid_init(tcfg, 31);

  GenConfig gcfg;
  gcfg.feature_channels = 4;
  gcfg.hidden_channels = 6;
  gcfg.residual_blocks = 1;
  gcfg.groupnorm_groups = 2;
  auto gen = gen_init(gcfg, 32);
  {
    Rng rng(33);
    for (auto& x : gen["exit.w"]->values) x = 0.1 * rng.normal();
    for (auto& x : gen["exit.b"]->values) x = 0.1 * rng.normal();
  }

  const int t_len = 8;
  Rng rng(34);
  std::vector<TensorPtr> seqs;
  for (int i = 0; i < 4; ++i) seqs.push_back(random_rows(t_len, 4, rng));
  auto mean0 = Tensor::create({4}, 0.25);
  auto mean1 = Tensor::create({4}, -0.5);
  const double tau = 0.08;

  SECTION("metric loss through the embedding network") {
    auto r = grad_check(
        [&] {
          auto emb = embed_batch(tcfg, tid, seqs, 2, 2);
          return rec_loss(batch_probabilities(emb, tau));
        },
        {tid["entry.w"], tid["exit.w"], tid["block0.conv1.w"], tid["block0.gn1.gamma"]});
    REQUIRE(r.max_rel_err < 1e-4);
  }

  SECTION("embedding objective with the adversarial term, generator frozen") {
    set_requires_grad(gen, false);
    auto r = grad_check(
        [&] {
          auto emb = embed_batch(tcfg, tid, seqs, 2, 2);
          AdversarialBatch ab;
          ab.emb = {tid_forward(tcfg, tid, gen_forward(gcfg, gen, seqs[2], mean0)),
                    tid_forward(tcfg, tid, gen_forward(gcfg, gen, seqs[0], mean1))};
          ab.target = {0, 1};
          auto rec = rec_loss(batch_probabilities(emb, tau));
          auto inv = inv_loss(adv_probabilities(ab, emb, tau));
          return total_tid_loss(rec, inv, 0.01);
        },
        {tid["entry.w"], tid["exit.w"], tid["block0.gn2.beta"]});
    set_requires_grad(gen, true);
    REQUIRE(r.max_rel_err < 1e-4);
  }

  SECTION("generator objective with cycle term, embedding network frozen") {
    set_requires_grad(tid, false);
    auto r = grad_check(
        [&] {
          auto emb = embed_batch(tcfg, tid, seqs, 2, 2);
          AdversarialBatch ab;
          ab.emb = {tid_forward(tcfg, tid, gen_forward(gcfg, gen, seqs[2], mean0)),
                    tid_forward(tcfg, tid, gen_forward(gcfg, gen, seqs[0], mean1))};
          ab.target = {0, 1};
          auto adv = adv_loss(adv_probabilities(ab, emb, tau));
          auto cyc = add(cycle_loss(gcfg, gen, seqs[2], mean0, mean1),
                         cycle_loss(gcfg, gen, seqs[0], mean1, mean0));
          return total_generator_loss(adv, cyc, 1.0);
        },
        {gen["entry.w"], gen["exit.w"], gen["block0.gn1.gamma"], gen["exit.b"]});
    set_requires_grad(tid, true);
    REQUIRE(r.max_rel_err < 1e-4);
  }
}
