#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "flowloc/generative.hpp"
#include "flowloc/rng.hpp"

using namespace flowloc;
using gen::AugmentStrategy;
using gen::GenConfig;
using gen::GenKind;

namespace {

GenConfig small_cfg(GenKind kind) {
    GenConfig cfg;
    cfg.kind = kind;
    cfg.hidden_width = 32;
    cfg.n_layers = 1;
    cfg.lr = 1e-3;
    cfg.latent_dim = 2;
    cfg.label_embed_dim = 4;
    cfg.batch_size = 32;
    cfg.n_classes = 1;
    return cfg;
}

data::SampleSet make_set(int label, std::vector<double> values) {
    data::SampleSet s;
    s.label = label;
    s.values = std::move(values);
    return s;
}

// Single-label dataset whose every value equals `target`.
data::Dataset delta_dataset(double target, int n_sets = 4, int per_set = 16) {
    data::Dataset ds;
    for (int i = 0; i < n_sets; ++i)
        ds.sets.push_back(make_set(0, std::vector<double>(static_cast<std::size_t>(per_set), target)));
    return ds;
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Independent check: W1 as the area between the two empirical CDFs,
// integrated over the merged support.
double w1_cdf_area(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<double> xs = a;
    xs.insert(xs.end(), b.begin(), b.end());
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
        const double fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), xs[k]) - a.begin()) /
                          static_cast<double>(a.size());
        const double fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), xs[k]) - b.begin()) /
                          static_cast<double>(b.size());
        acc += std::abs(fa - fb) * (xs[k + 1] - xs[k]);
    }
    return acc;
}

// Exhaustive assignment search; optimal for equal-weight empirical measures.
double w1_brute_force(std::vector<double> a, std::vector<double> b) {
    REQUIRE(a.size() == b.size());
    std::sort(b.begin(), b.end());
    std::vector<std::size_t> perm(a.size());
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    std::sort(perm.begin(), perm.end());
    do {
        double cost = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) cost += std::abs(a[i] - b[perm[i]]);
        best = std::min(best, cost / static_cast<double>(a.size()));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

std::vector<double> random_values(rng::Stream& rs, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rs.uniform(-2.0, 3.0);
    return v;
}

}  // namespace

TEST_CASE("generator names and config bounds are enforced") {
    CHECK(gen::kind_from_name("cgan") == GenKind::cgan);
    CHECK(gen::kind_from_name("cvae") == GenKind::cvae);
    CHECK(gen::kind_from_name("wgan") == GenKind::wgan);
    CHECK(gen::kind_name(GenKind::wgan) == "wgan");
    CHECK_THROWS_AS(gen::kind_from_name("gmm"), std::invalid_argument);
    CHECK(gen::augment_from_name("fixed") == AugmentStrategy::fixed);
    CHECK_THROWS_AS(gen::augment_from_name("half"), std::invalid_argument);

    CHECK_NOTHROW(gen::validate_gen_config(small_cfg(GenKind::cgan)));
    GenConfig bad = small_cfg(GenKind::cgan);
    bad.hidden_width = 16;
    CHECK_THROWS_AS(gen::validate_gen_config(bad), std::invalid_argument);
    bad = small_cfg(GenKind::cgan);
    bad.n_layers = 4;
    CHECK_THROWS_AS(gen::validate_gen_config(bad), std::invalid_argument);
    bad = small_cfg(GenKind::cgan);
    bad.lr = 1e-2;
    CHECK_THROWS_AS(gen::validate_gen_config(bad), std::invalid_argument);
    bad = small_cfg(GenKind::cgan);
    bad.latent_dim = 1;
    CHECK_THROWS_AS(gen::validate_gen_config(bad), std::invalid_argument);
    bad = small_cfg(GenKind::cgan);
    bad.label_embed_dim = 2;
    CHECK_THROWS_AS(gen::validate_gen_config(bad), std::invalid_argument);
}

TEST_CASE("generator config json round trip preserves every field") {
    GenConfig cfg;
    cfg.kind = GenKind::wgan;
    cfg.hidden_width = 128;
    cfg.n_layers = 3;
    cfg.lr = 2e-4;
    cfg.latent_dim = 16;
    cfg.label_embed_dim = 8;
    cfg.clip_c = 0.02;
    cfg.n_critic = 3;
    cfg.epochs = 7;
    cfg.batch_size = 17;
    cfg.n_classes = 9;
    cfg.seed = 42;
    const GenConfig back = gen::gen_config_from_json(gen::gen_config_to_json(cfg));
    CHECK(back.kind == cfg.kind);
    CHECK(back.hidden_width == cfg.hidden_width);
    CHECK(back.n_layers == cfg.n_layers);
    CHECK(back.lr == cfg.lr);
    CHECK(back.latent_dim == cfg.latent_dim);
    CHECK(back.label_embed_dim == cfg.label_embed_dim);
    CHECK(back.clip_c == cfg.clip_c);
    CHECK(back.n_critic == cfg.n_critic);
    CHECK(back.epochs == cfg.epochs);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.n_classes == cfg.n_classes);
    CHECK(back.seed == cfg.seed);
}

TEST_CASE("per-sample adversarial losses at probability one half equal ln two") {
    CHECK(gen::bce_real_from_logit(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(gen::bce_fake_from_logit(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // A confident correct discriminator drives both terms toward zero.
    CHECK(gen::bce_real_from_logit(30.0) < 1e-12);
    CHECK(gen::bce_fake_from_logit(-30.0) < 1e-12);
}

TEST_CASE("critic objective vanishes on matched output distributions") {
    CHECK(gen::wgan_critic_objective({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 0.0);
    CHECK(gen::wgan_critic_objective({0.0, 1.0}, {2.0, 3.0}) == doctest::Approx(2.0));
    CHECK_THROWS_AS(gen::wgan_critic_objective({}, {1.0}), std::invalid_argument);
}

TEST_CASE("gaussian divergence closed form matches numeric integration") {
    CHECK(gen::gaussian_kl_standard(0.0, 1.0) == 0.0);
    CHECK(gen::gaussian_kl_standard(1.0, 1.0) == doctest::Approx(0.5).epsilon(1e-12));

    rng::Stream rs(2024);
    for (int trial = 0; trial < 50; ++trial) {
        const double mu = rs.uniform(-2.0, 2.0);
        const double sigma = rs.uniform(0.3, 2.5);
        // Simpson integration of p(x) * log(p(x)/q(x)) with p = N(mu, sigma^2), q = N(0,1)
        const double lo = std::min(mu - 12.0 * sigma, -12.0);
        const double hi = std::max(mu + 12.0 * sigma, 12.0);
        const int n = 20000;  // even
        const double h = (hi - lo) / n;
        auto integrand = [&](double x) {
            const double zp = (x - mu) / sigma;
            const double log_p = -0.5 * zp * zp - std::log(sigma) - 0.5 * std::log(2.0 * M_PI);
            const double log_q = -0.5 * x * x - 0.5 * std::log(2.0 * M_PI);
            return std::exp(log_p) * (log_p - log_q);
        };
        double acc = integrand(lo) + integrand(hi);
        for (int i = 1; i < n; ++i) acc += integrand(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
        const double numeric = acc * h / 3.0;
        CHECK(gen::gaussian_kl_standard(mu, sigma) == doctest::Approx(numeric).epsilon(1e-6));
    }
}

TEST_CASE("wasserstein distance on pinned examples") {
    CHECK(gen::wasserstein1({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK(gen::wasserstein1({0, 0}, {1, 1}) == 1.0);
    CHECK(gen::wasserstein1({0, 2}, {1, 3}) == 1.0);
    CHECK(gen::wasserstein1({0, 1}, {0, 0.5, 1}) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(gen::wasserstein1({3, 1, 2}, {2, 3, 1}) == 0.0);  // order never matters
    CHECK_THROWS_AS(gen::wasserstein1({}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(gen::wasserstein1({1.0}, {}), std::invalid_argument);
}

TEST_CASE("wasserstein distance equals the cdf-area integral on random samples") {
    rng::Stream rs(501);
    for (int trial = 0; trial < 400; ++trial) {
        const std::size_t n = 1 + rs.uniform_int(12);
        const std::size_t m = 1 + rs.uniform_int(12);
        const auto a = random_values(rs, n);
        const auto b = random_values(rs, m);
        const double got = gen::wasserstein1(a, b);
        CHECK(got == doctest::Approx(w1_cdf_area(a, b)).epsilon(1e-9));
        CHECK(gen::wasserstein1(b, a) == doctest::Approx(got).epsilon(1e-12));  // symmetry
        CHECK(got >= 0.0);
    }
}

TEST_CASE("wasserstein distance matches exhaustive assignment search") {
    rng::Stream rs(502);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rs.uniform_int(5);  // up to 6 per side
        const auto a = random_values(rs, n);
        const auto b = random_values(rs, n);
        CHECK(gen::wasserstein1(a, b) == doctest::Approx(w1_brute_force(a, b)).epsilon(1e-9));
    }
}

TEST_CASE("wasserstein distance satisfies the triangle inequality") {
    rng::Stream rs(503);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_values(rs, 1 + rs.uniform_int(6));
        const auto b = random_values(rs, 1 + rs.uniform_int(6));
        const auto c = random_values(rs, 1 + rs.uniform_int(6));
        CHECK(gen::wasserstein1(a, c) <=
              gen::wasserstein1(a, b) + gen::wasserstein1(b, c) + 1e-12);
    }
}

TEST_CASE("adversarial training fits a degenerate target and stays reproducible") {
    GenConfig cfg = small_cfg(GenKind::cgan);
    cfg.epochs = 100;
    const data::Dataset ds = delta_dataset(0.5);

    const gen::GenTrainResult a = gen::train_cgan(cfg, ds, 11);
    REQUIRE(a.history.loss_g.size() == 100);
    REQUIRE(a.history.loss_d.size() == 100);

    const auto big = gen::sample(a.checkpoint, 0, 10000, 77);
    CHECK(std::abs(mean_of(big) - 0.5) < 0.05);
    for (double v : big) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    const gen::GenTrainResult b = gen::train_cgan(cfg, ds, 11);
    CHECK(a.history.loss_g == b.history.loss_g);
    CHECK(a.history.loss_d == b.history.loss_d);
    const gen::GenTrainResult c = gen::train_cgan(cfg, ds, 12);
    CHECK(a.history.loss_g != c.history.loss_g);

    const gen::GenEval ev = gen::eval_generator(a.checkpoint, ds, 256, 5);
    REQUIRE(ev.regions.size() == 1);
    CHECK(ev.regions[0].label == 0);
    CHECK(ev.regions[0].n_real == 64);
    CHECK(ev.regions[0].n_fake == 256);
    CHECK(ev.mean_w1 < 0.1);
}

TEST_CASE("variational training moves the decoder to an off-center target") {
    GenConfig cfg = small_cfg(GenKind::cvae);
    cfg.epochs = 300;
    cfg.batch_size = 64;
    const data::Dataset ds = delta_dataset(0.2);

    const gen::GenTrainResult r = gen::train_cvae(cfg, ds, 21);
    REQUIRE(r.history.loss_g.size() == 300);
    CHECK(r.checkpoint.model_kind == "cvae");
    // Total loss shrinks as reconstruction locks on.
    CHECK(r.history.loss_g.back() < r.history.loss_g.front());

    const auto vals = gen::sample(r.checkpoint, 0, 500, 3);
    CHECK(std::abs(mean_of(vals) - 0.2) < 0.05);
    for (double v : vals) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    const gen::GenTrainResult r2 = gen::train_cvae(cfg, ds, 21);
    CHECK(r.history.loss_g == r2.history.loss_g);
    CHECK(r.history.loss_d == r2.history.loss_d);
}

TEST_CASE("critic weights stay inside the clip bound after training") {
    GenConfig cfg = small_cfg(GenKind::wgan);
    cfg.epochs = 10;
    cfg.n_critic = 5;
    const data::Dataset ds = delta_dataset(0.5);

    const gen::GenTrainResult r = gen::train_wgan(cfg, ds, 31);
    REQUIRE(r.history.loss_d.size() == 10);
    REQUIRE(r.history.loss_g.size() == 10);
    CHECK(r.checkpoint.model_kind == "wgan");

    const auto& ps = r.checkpoint.params;
    bool saw_critic = false;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps.names[i].rfind("d.", 0) != 0) continue;
        saw_critic = true;
        for (double v : ps.tensors[i].data) CHECK(std::abs(v) <= cfg.clip_c);
    }
    CHECK(saw_critic);

    const gen::GenTrainResult r2 = gen::train_wgan(cfg, ds, 31);
    CHECK(r.history.loss_d == r2.history.loss_d);
    CHECK(r.history.loss_g == r2.history.loss_g);

    const auto vals = gen::sample(r.checkpoint, 0, 64, 9);
    for (double v : vals) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("sampling is deterministic, label checked, and empty for zero count") {
    GenConfig cfg = small_cfg(GenKind::cgan);
    cfg.epochs = 0;
    const gen::GenTrainResult r = gen::train_cgan(cfg, delta_dataset(0.5), 1);
    CHECK(r.history.loss_g.empty());

    CHECK(gen::sample(r.checkpoint, 0, 0, 4).empty());
    const auto s1 = gen::sample(r.checkpoint, 0, 32, 4);
    const auto s2 = gen::sample(r.checkpoint, 0, 32, 4);
    CHECK(s1 == s2);
    const auto s3 = gen::sample(r.checkpoint, 0, 32, 5);
    CHECK(s1 != s3);
    CHECK_THROWS_AS(gen::sample(r.checkpoint, 99, 4, 4), std::invalid_argument);
    CHECK_THROWS_AS(gen::sample(r.checkpoint, 0, -1, 4), std::invalid_argument);
}

TEST_CASE("training rejects datasets without any values") {
    GenConfig cfg = small_cfg(GenKind::cgan);
    data::Dataset empty;
    empty.sets.push_back(make_set(0, {}));
    CHECK_THROWS_AS(gen::train_cgan(cfg, empty, 1), std::invalid_argument);
    CHECK_THROWS_AS(gen::train_cvae(cfg, empty, 1), std::invalid_argument);
    CHECK_THROWS_AS(gen::train_wgan(cfg, empty, 1), std::invalid_argument);

    data::Dataset two_labels = delta_dataset(0.5);
    two_labels.sets.push_back(make_set(1, {0.25}));
    CHECK_THROWS_AS(gen::train_cgan(cfg, two_labels, 1), std::invalid_argument);  // n_classes = 1
}

TEST_CASE("generator evaluation skips valueless labels and scores the rest") {
    GenConfig cfg = small_cfg(GenKind::cgan);
    cfg.epochs = 0;
    gen::GenTrainResult r = gen::train_cgan(cfg, delta_dataset(1.0), 1);

    // Constant-zero generator: zeroed output weights, hard-negative bias.
    auto& ps = r.checkpoint.params;
    auto& w = ps.tensors[static_cast<std::size_t>(ps.index_of("g.out_w"))];
    std::fill(w.data.begin(), w.data.end(), 0.0);
    ps.tensors[static_cast<std::size_t>(ps.index_of("g.out_b"))].data[0] = -800.0;

    data::Dataset ds = delta_dataset(1.0, 2, 8);
    ds.sets.push_back(make_set(0, {}));  // empty set merges into label 0
    const gen::GenEval ev = gen::eval_generator(r.checkpoint, ds, 16, 2);
    REQUIRE(ev.regions.size() == 1);
    CHECK(ev.regions[0].w1 == 1.0);
    CHECK(ev.mean_w1 == 1.0);
    CHECK(ev.skipped_labels.empty());

    data::Dataset with_hole = delta_dataset(1.0, 1, 8);
    with_hole.sets.push_back(make_set(5, {}));  // label 5 has no values at all
    const gen::GenEval ev2 = gen::eval_generator(r.checkpoint, with_hole, 16, 2);
    REQUIRE(ev2.regions.size() == 1);
    CHECK(ev2.skipped_labels == std::vector<int>{5});
}

TEST_CASE("augmentation strategies control the appended sample count") {
    GenConfig cfg = small_cfg(GenKind::cgan);
    cfg.epochs = 0;
    const gen::GenTrainResult r = gen::train_cgan(cfg, delta_dataset(0.5), 1);
    const std::vector<double> base = {0.1, 0.9, 0.4, 0.6};

    CHECK(gen::augment_set(base, AugmentStrategy::none, nullptr, 0, 7) == base);

    const auto fixed = gen::augment_set(base, AugmentStrategy::fixed, &r.checkpoint, 0, 7);
    REQUIRE(fixed.size() == 6);  // 4 + ceil(4/2)
    CHECK(std::equal(base.begin(), base.end(), fixed.begin()));  // originals preserved in order

    const auto odd = gen::augment_set({0.1, 0.2, 0.3, 0.4, 0.5}, AugmentStrategy::fixed,
                                      &r.checkpoint, 0, 7);
    CHECK(odd.size() == 8);  // 5 + ceil(5/2)

    const auto rnd1 = gen::augment_set(base, AugmentStrategy::random, &r.checkpoint, 0, 7);
    const auto rnd2 = gen::augment_set(base, AugmentStrategy::random, &r.checkpoint, 0, 7);
    CHECK(rnd1 == rnd2);  // same seed, same draw

    CHECK_THROWS_AS(gen::augment_set(base, AugmentStrategy::fixed, nullptr, 0, 7),
                    std::invalid_argument);
    CHECK_THROWS_AS(gen::augment_set({}, AugmentStrategy::none, nullptr, 0, 7),
                    std::invalid_argument);
}

TEST_CASE("random augmentation counts are uniform over zero to set size") {
    GenConfig cfg = small_cfg(GenKind::cgan);
    cfg.epochs = 0;
    const gen::GenTrainResult r = gen::train_cgan(cfg, delta_dataset(0.5), 1);
    const std::vector<double> base = {0.1, 0.9, 0.4, 0.6};

    std::vector<int> buckets(5, 0);
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        const auto out = gen::augment_set(base, AugmentStrategy::random, &r.checkpoint, 0,
                                          static_cast<std::uint64_t>(t));
        const std::size_t appended = out.size() - base.size();
        REQUIRE(appended <= 4);
        buckets[appended] += 1;
    }
    for (int k = 0; k <= 4; ++k) {
        const double frac = buckets[static_cast<std::size_t>(k)] / static_cast<double>(trials);
        CHECK(frac == doctest::Approx(0.2).epsilon(0.1));  // within 2% absolute of 20%
    }
}
