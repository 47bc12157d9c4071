#include <doctest.h>

#include <random>

#include "gazekit/baselines.hpp"
#include "gazekit/metrics.hpp"
#include "oracles.hpp"

using namespace gazekit;
using namespace gazekit::baselines;
using oracle::error_of;

namespace {

// Direct KDE: sum of isotropic Gaussians at pixel centers, renormalized,
// mixed with eps uniform. Returns natural-log probabilities.
std::vector<double> direct_kde_log(const std::vector<Point>& pts, const Shape& shape, double sigma, double eps) {
  std::vector<double> k(shape.size(), 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < shape.height; ++r) {
    for (std::size_t c = 0; c < shape.width; ++c) {
      double s = 0.0;
      for (const auto& p : pts) {
        const double dx = c + 0.5 - p.x, dy = r + 0.5 - p.y;
        s += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      }
      k[shape.index(r, c)] = s;
      total += s;
    }
  }
  std::vector<double> out(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) out[i] = std::log((1 - eps) * k[i] / total + eps / k.size());
  return out;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST_CASE("KdeSpec validation") {
  KdeSpec s;
  CHECK_FALSE(error_of([&] { s.validate(); }).has_value());
  s.bandwidth_grid = {2.0, 1.0};
  CHECK(error_of([&] { s.validate(); }) == ErrorCode::BadArgument);
  s.bandwidth_grid = {};
  CHECK(error_of([&] { s.validate(); }) == ErrorCode::BadArgument);
  s.bandwidth = 1.0;
  CHECK_FALSE(error_of([&] { s.validate(); }).has_value());
  s.bandwidth = -1.0;
  CHECK(error_of([&] { s.validate(); }) == ErrorCode::BadArgument);
  KdeSpec e;
  e.regularizer_eps = 1.0;
  CHECK(error_of([&] { e.validate(); }) == ErrorCode::BadArgument);
}

TEST_CASE("kde_grid equals the direct sum of Gaussians") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Shape shape{7, 9};
  std::vector<Point> pts(6);
  for (auto& p : pts) p = {u(rng) * 9, u(rng) * 7};
  for (double sigma : {0.7, 2.0, 5.0}) {
    const auto fast = kde_grid(pts, shape, sigma);
    double total = 0.0;
    for (double v : fast) total += v;
    const auto slow = direct_kde_log(pts, shape, sigma, 0.0);
    for (std::size_t i = 0; i < fast.size(); ++i)
      CHECK(std::log(fast[i] / total) == doctest::Approx(slow[i]).epsilon(1e-12));
  }
}

TEST_CASE("center bias with a huge bandwidth is nearly flat") {
  KdeSpec spec;
  spec.bandwidth = 80.0;
  const auto r = centerbias({{"a", "s", 4.0, 4.0}}, {{"a", {8, 8}}}, {8, 8}, spec);
  double lo = 1, hi = 0;
  for (std::size_t i = 0; i < r.density.size(); ++i) {
    lo = std::min(lo, r.density.prob(i));
    hi = std::max(hi, r.density.prob(i));
  }
  CHECK(hi / lo < 1.1);
}

TEST_CASE("center bias mode sits on a lone fixation") {
  KdeSpec spec;
  spec.bandwidth = 0.5;
  spec.regularizer_eps = 0.0;
  const auto r = centerbias({{"a", "s", 1.5, 1.5}}, {{"a", {3, 3}}}, {3, 3}, spec);
  CHECK(argmax(r.density.log_p()) == 4);
}

TEST_CASE("center bias of two opposite corners is symmetric under a half turn") {
  const FixationSet fs{{"a", "s", 0.5, 0.5}, {"a", "s", 2.5, 2.5}};
  const auto r = centerbias(fs, {{"a", {3, 3}}}, {3, 3}, KdeSpec{});
  for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(r.density.prob(i) - r.density.prob(8 - i)) < 1e-12);
}

TEST_CASE("center bias is valid for every grid bandwidth and errors on no fixations") {
  std::mt19937_64 rng(2);
  FixationSet fs;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 30; ++i) fs.push_back({"i" + std::to_string(i % 3), "s", u(rng) * 10, u(rng) * 6});
  std::map<std::string, Shape> shapes{{"i0", {6, 10}}, {"i1", {6, 10}}, {"i2", {6, 10}}};
  for (double sigma : KdeSpec{}.bandwidth_grid) {
    KdeSpec s;
    s.bandwidth = sigma;
    const auto d = centerbias(fs, shapes, {6, 10}, s).density;
    double total = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) total += d.prob(i);
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
  CHECK(error_of([&] { centerbias({}, shapes, {6, 10}, KdeSpec{}); }) == ErrorCode::NoFixations);
}

TEST_CASE("center bias bandwidth maximizes the leave-one-image-out likelihood") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::map<std::string, Shape> shapes{{"a", {10, 12}}, {"b", {20, 24}}, {"c", {10, 12}}, {"d", {5, 6}}};
  FixationSet fs;
  for (const auto& [id, sh] : shapes) {
    for (int i = 0; i < 12; ++i) {
      const double x = std::clamp(sh.width / 2.0 + n(rng) * sh.width / 5.0, 0.0, sh.width - 1e-6);
      const double y = std::clamp(sh.height / 2.0 + n(rng) * sh.height / 5.0, 0.0, sh.height - 1e-6);
      fs.push_back({id, "s", x, y});
    }
  }
  const Shape target{10, 12};
  const KdeSpec spec;
  const auto r = centerbias(fs, shapes, target, spec);
  REQUIRE(r.cv_scores.size() == spec.bandwidth_grid.size());
  for (std::size_t g = 0; g < spec.bandwidth_grid.size(); ++g) {
    double acc = 0.0;
    for (const auto& [held, sh] : shapes) {
      std::vector<Point> others, mine;
      for (const auto& f : fs) {
        const Shape& from = shapes.at(f.image_id);
        const Point p{f.x * target.width / from.width, f.y * target.height / from.height};
        (f.image_id == held ? mine : others).push_back(p);
      }
      const auto lp = direct_kde_log(others, target, spec.bandwidth_grid[g], spec.regularizer_eps);
      for (const auto& p : mine) {
        const auto row = std::min<std::size_t>(static_cast<std::size_t>(p.y), target.height - 1);
        const auto col = std::min<std::size_t>(static_cast<std::size_t>(p.x), target.width - 1);
        acc += lp[target.index(row, col)] / std::log(2.0);
      }
    }
    CHECK(r.cv_scores[g] == doctest::Approx(acc / fs.size()).epsilon(1e-9));
  }
  CHECK(r.bandwidth == spec.bandwidth_grid[argmax(r.cv_scores)]);
  CHECK(centerbias(fs, shapes, target, spec).bandwidth == r.bandwidth);
}

TEST_CASE("gold standard puts its mode on a repeated fixation") {
  const FixationSet fs(5, Fixation{"a", "s", 2.5, 1.5});
  const GoldStandard g(fs, {4, 5}, KdeSpec{});
  CHECK(argmax(g.density().log_p()) == Shape{4, 5}.index(1, 2));
  CHECK(error_of([] {
          const FixationSet one{{"a", "s", 0.5, 0.5}};
          GoldStandard(one, {2, 2}, KdeSpec{});
        }) == ErrorCode::TooFewFixations);
}

TEST_CASE("leave-one-out score of a duplicated fixation equals the KDE of the other copies") {
  const FixationSet fs{{"a", "s", 1.2, 2.7}, {"a", "s", 1.2, 2.7}, {"a", "s", 1.2, 2.7}, {"a", "s", 4.1, 0.3}};
  KdeSpec spec;
  spec.bandwidth = 1.5;
  const GoldStandard g(fs, {5, 6}, spec);
  const auto lp = direct_kde_log({{1.2, 2.7}, {1.2, 2.7}, {4.1, 0.3}}, {5, 6}, 1.5, spec.regularizer_eps);
  CHECK(g.leave_one_out_log_prob(0) == doctest::Approx(lp[Shape{5, 6}.index(2, 1)]).epsilon(1e-12));
}

TEST_CASE("gold standard bandwidth maximizes the leave-one-fixation-out likelihood") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FixationSet fs;
  for (int i = 0; i < 25; ++i) fs.push_back({"a", "s", 3 + u(rng) * 4, 2 + u(rng) * 3});
  const Shape shape{9, 12};
  const KdeSpec spec;
  const GoldStandard g(fs, shape, spec);
  for (std::size_t k = 0; k < spec.bandwidth_grid.size(); ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < fs.size(); ++i) {
      std::vector<Point> rest;
      for (std::size_t j = 0; j < fs.size(); ++j) {
        if (j != i) rest.push_back({fs[j].x, fs[j].y});
      }
      acc +=
          direct_kde_log(rest, shape, spec.bandwidth_grid[k], spec.regularizer_eps)[fs[i].pixel(shape)] / std::log(2.0);
    }
    CHECK(g.cv_scores()[k] == doctest::Approx(acc / fs.size()).epsilon(1e-9));
  }
  CHECK(g.bandwidth() == spec.bandwidth_grid[argmax(g.cv_scores())]);
}

TEST_CASE("leave-one-out likelihood never exceeds the pooled likelihood") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const auto d = oracle::random_density({8, 8}, rng, 1.5);
    const auto fs = sample_fixations(d, "a", 20, rng);
    const GoldStandard g(fs, {8, 8}, KdeSpec{});
    const auto loo = g.log2_likelihoods(GoldMode::LeaveOneOut);
    const auto pooled = g.log2_likelihoods(GoldMode::Pooled);
    CHECK(oracle::mean(loo) <= oracle::mean(pooled));
  }
}

TEST_CASE("gold standard beats the center bias on two-blob densities") {
  const Shape shape{16, 16};
  const double blobs[4][4] = {{4, 4, 11, 12}, {4, 12, 11, 4}, {3, 8, 12, 8}, {8, 3, 8, 13}};
  std::mt19937_64 rng(6);
  FixationSet fs;
  std::map<std::string, Shape> shapes;
  for (int img = 0; img < 4; ++img) {
    std::vector<double> v(shape.size());
    for (std::size_t r = 0; r < 16; ++r) {
      for (std::size_t c = 0; c < 16; ++c) {
        auto blob = [&](double cy, double cx) {
          return std::exp(-((r + 0.5 - cy) * (r + 0.5 - cy) + (c + 0.5 - cx) * (c + 0.5 - cx)) / 4.0);
        };
        v[shape.index(r, c)] = blob(blobs[img][0], blobs[img][1]) + blob(blobs[img][2], blobs[img][3]);
      }
    }
    const std::string id = "i" + std::to_string(img);
    const auto part = sample_fixations(normalize(shape, v), id, 2500, rng);
    fs.insert(fs.end(), part.begin(), part.end());
    shapes[id] = shape;
  }
  const auto cb = centerbias(fs, shapes, shape, KdeSpec{});
  std::vector<double> diff;
  for (const auto& [id, f] : group_by_image(fs)) {
    const GoldStandard g(f, shape, KdeSpec{});
    const auto loo = g.log2_likelihoods(GoldMode::LeaveOneOut);
    for (std::size_t i = 0; i < f.size(); ++i) diff.push_back(loo[i] - cb.density.log_at(f[i].pixel(shape)) / kLn2);
  }
  const double m = oracle::mean(diff);
  double var = 0.0;
  for (double x : diff) var += (x - m) * (x - m);
  const double se = std::sqrt(var / (diff.size() - 1) / diff.size());
  CHECK(m > 3 * se);
}

TEST_CASE("empirical map") {
  const Shape shape{5, 5};
  const auto one = empirical_map(FixationSet{{"a", "s", 2.5, 2.5}}, shape, 1.0);
  CHECK(argmax(one.log_p()) == 12);
  CHECK(error_of([&] { empirical_map(FixationSet{}, shape, 1.0); }) == ErrorCode::NoFixations);
  const auto two = empirical_map(FixationSet{{"a", "s", 0.5, 2.5}, {"a", "s", 4.5, 2.5}}, shape, 0.8);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 5; ++c)
      CHECK(std::abs(two.prob(shape.index(r, c)) - two.prob(shape.index(r, 4 - c))) < 1e-15);
  }
  CHECK(two.prob(shape.index(2, 0)) > two.prob(shape.index(2, 2)));
}

TEST_CASE("relative score") {
  CHECK(relative_score(0.9, 0.9) == 100.0);
  CHECK(relative_score(0.0, 0.9) == 0.0);
  CHECK(relative_score(0.78 * 1.25, 1.25) == doctest::Approx(78.0).epsilon(1e-12));
  CHECK(error_of([] { relative_score(0.5, 0.0); }) == ErrorCode::NonpositiveGold);
}
