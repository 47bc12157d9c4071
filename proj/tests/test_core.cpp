#include <doctest.h>

#include <bit>
#include <cstdlib>
#include <cstring>
#include <numbers>
#include <random>

#include "gazekit/blur.hpp"
#include "gazekit/core.hpp"
#include "gazekit/io.hpp"
#include "gazekit/json_writer.hpp"
#include "gazekit/parallel.hpp"
#include "oracles.hpp"

using namespace gazekit;
using oracle::error_of;

namespace {

// Hand-assembled FDF1 file, independent of io::write_density.
io::Bytes fdf1(std::uint32_t h, std::uint32_t w, std::uint8_t flag, const std::vector<double>& values) {
  io::Bytes b{'F', 'D', 'F', '1'};
  for (std::uint32_t v : {h, w}) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  b.push_back(flag);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return b;
}

}  // namespace

TEST_CASE("normalize of a uniform grid gives ln(1/4) everywhere") {
  const std::vector<double> v{1, 1, 1, 1};
  const auto d = normalize({2, 2}, v);
  for (double lp : d.log_p()) CHECK(lp == doctest::Approx(std::log(0.25)).epsilon(1e-15));
}

TEST_CASE("normalize keeps zeros as -inf") {
  const std::vector<double> v{2, 0};
  const auto d = normalize({1, 2}, v);
  CHECK(d.log_at(0) == 0.0);
  CHECK(d.log_at(1) == kNegInf);
}

TEST_CASE("normalize of an already normalized grid matches hand logarithms") {
  const std::vector<double> v{0.4, 0.3, 0.2, 0.1};
  const auto d = normalize({1, 4}, v);
  for (std::size_t i = 0; i < 4; ++i) CHECK(d.log_at(i) == doctest::Approx(std::log(v[i])).epsilon(1e-14));
}

TEST_CASE("normalize rejects bad input") {
  const std::vector<double> zeros{0, 0}, negative{1, -1}, nan{1, std::nan("")}, inf{1, INFINITY};
  CHECK(error_of([&] { normalize({1, 2}, zeros); }) == ErrorCode::AllZero);
  CHECK(error_of([&] { normalize({1, 2}, negative); }) == ErrorCode::BadValue);
  CHECK(error_of([&] { normalize({1, 2}, nan); }) == ErrorCode::BadValue);
  CHECK(error_of([&] { normalize({1, 2}, inf); }) == ErrorCode::BadValue);
}

TEST_CASE("DensityGrid::from_log validates the invariant") {
  CHECK(error_of([] { DensityGrid::from_log({1, 2}, {std::log(0.5), std::log(0.4)}); }) == ErrorCode::NotNormalized);
  CHECK(error_of([] { DensityGrid::from_log({1, 2}, {kNegInf, kNegInf}); }).has_value());
  CHECK(error_of([] { DensityGrid::from_log({1, 2}, {0.0, INFINITY}); }).has_value());
  CHECK(error_of([] { DensityGrid::from_log({0, 2}, {}); }).has_value());
  CHECK_FALSE(error_of([] { DensityGrid::from_log({1, 2}, {0.0, kNegInf}); }).has_value());
}

TEST_CASE("log_add agrees with the direct formula where it is safe") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-29.0, 29.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng);
    CHECK(log_add(a, b) == doctest::Approx(std::log(std::exp(a) + std::exp(b))).epsilon(1e-13));
  }
  CHECK(log_add(kNegInf, 1.5) == 1.5);
  CHECK(log_add(kNegInf, kNegInf) == kNegInf);
  const std::vector<double> v{1000.0, 1000.0};
  CHECK(logsumexp(v) == doctest::Approx(1000.0 + std::numbers::ln2));
}

TEST_CASE("every grid-producing operation returns a normalized density") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto d = oracle::random_density({7, 5}, rng, 10.0);
    double s = 0.0;
    for (double p : oracle::probabilities(d)) s += p;
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("FDF1 linear files convert to log domain") {
  const auto d = io::read_density(fdf1(1, 2, 0, {0.5, 0.5}));
  CHECK(d.log_at(0) == doctest::Approx(std::log(0.5)));
  CHECK(d.log_at(1) == doctest::Approx(std::log(0.5)));
}

TEST_CASE("FDF1 payload summing to 0.9 is rejected") {
  CHECK(error_of([] { io::read_density(fdf1(1, 2, 0, {0.5, 0.4})); }) == ErrorCode::NotNormalized);
  CHECK(error_of([] { io::read_density(fdf1(1, 2, 1, {std::log(0.5), std::log(0.4)})); }) == ErrorCode::NotNormalized);
}

TEST_CASE("FDF1 header errors") {
  auto bad_magic = fdf1(1, 1, 1, {0.0});
  bad_magic[0] = 'X';
  CHECK(error_of([&] { io::read_density(bad_magic); }) == ErrorCode::BadMagic);
  CHECK(error_of([] { io::read_density(fdf1(0, 1, 1, {})); }) == ErrorCode::BadDimensions);
  CHECK(error_of([] { io::read_density(fdf1(2, 2, 1, {0.0})); }) == ErrorCode::BadDimensions);
  CHECK(error_of([] { io::read_density(fdf1(0xffffffffu, 0xffffffffu, 1, {})); }) == ErrorCode::BadDimensions);
  CHECK(error_of([] { io::read_density(fdf1(1, 1, 7, {0.0})); }).has_value());
}

TEST_CASE("FDF1 round trip of the 0.4/0.3/0.2/0.1 grid is byte-identical") {
  const std::vector<double> v{0.4, 0.3, 0.2, 0.1};
  const auto d = normalize({2, 2}, v);
  const auto bytes = io::write_density(d);
  CHECK(bytes.size() == 13 + 4 * 8);
  const auto again = io::read_density(bytes);
  CHECK(io::write_density(again) == bytes);
  for (std::size_t i = 0; i < 4; ++i) CHECK(again.log_at(i) == d.log_at(i));
}

TEST_CASE("FDF1 log-flag files round trip bit for bit") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto d = oracle::random_density({5, 9}, rng, 20.0);
    const auto bytes = io::write_density(d);
    CHECK(io::write_density(io::read_density(bytes)) == bytes);
  }
}

TEST_CASE("FFV1 round trip and dimension checks") {
  std::vector<double> values(2 * 3 * 4);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(0.1 * static_cast<double>(i) - 1.0);
  const FeatureVolume f(2, {3, 4}, values);
  const auto bytes = io::write_features(f);
  CHECK(bytes.size() == 16 + values.size() * 4);
  const auto g = io::read_features(bytes);
  CHECK(g.channels() == 2);
  CHECK(g.shape() == Shape{3, 4});
  for (std::size_t i = 0; i < values.size(); ++i) CHECK(g.values()[i] == values[i]);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK(error_of([&] { io::read_features(truncated); }) == ErrorCode::BadDimensions);
}

TEST_CASE("fixation CSV parsing") {
  const auto fs = io::read_fixations("image_id,subject_id,x,y\nimg1,s1,3.2,0.9\n");
  REQUIRE(fs.size() == 1);
  CHECK(fs[0].row() == 0);
  CHECK(fs[0].col() == 3);
  CHECK(fs[0].pixel({2, 8}) == 3);

  CHECK(io::read_fixations("image_id,subject_id,x,y\n").empty());
  CHECK(io::read_fixations("image_id,subject_id,x,y\r\nimg1,s1,1,1\r\n").size() == 1);

  bool mentions_line = false;
  try {
    io::read_fixations("image_id,subject_id,x,y\nimg1,s1,1,1\nimg1,s1,abc,1\n");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    mentions_line = std::string(e.what()).find("line 3") != std::string::npos;
  }
  CHECK(mentions_line);
  CHECK(error_of([] { io::read_fixations("id,x,y\n"); }) == ErrorCode::ParseError);
}

TEST_CASE("fixation CSV round trip preserves coordinates") {
  FixationSet fs{{"a", "s1", 0.1 + 0.2, 1.0 / 3.0}, {"b", "s2", 7.999999999, 0.0}};
  const auto back = io::read_fixations(io::write_fixations(fs));
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].image_id == fs[i].image_id);
    CHECK(back[i].subject_id == fs[i].subject_id);
    CHECK(back[i].x == fs[i].x);
    CHECK(back[i].y == fs[i].y);
  }
}

TEST_CASE("dataset attach validates bounds and image ids") {
  Dataset ds;
  ds.add_image("img1", {2, 8});
  CHECK(error_of([&] { ds.attach_fixations({{"img1", "s1", 8.0, 0.0}}); }) == ErrorCode::OutOfBounds);
  CHECK(error_of([&] { ds.attach_fixations({{"img1", "s1", 0.0, -0.5}}); }) == ErrorCode::OutOfBounds);
  CHECK(error_of([&] { ds.attach_fixations({{"nope", "s1", 0.0, 0.0}}); }) == ErrorCode::UnknownImage);
  CHECK_FALSE(error_of([&] { ds.attach_fixations({{"img1", "s1", 7.99, 1.99}}); }).has_value());
  CHECK(error_of([&] { ds.add_density("m", "img1", DensityGrid::uniform({2, 7})); }) == ErrorCode::ShapeMismatch);
  CHECK(error_of([&] { ds.model("m"); }) == ErrorCode::MissingDensity);
}

TEST_CASE("image registry round trip") {
  std::map<std::string, Shape> reg{{"a", {3, 4}}, {"b", {1, 1}}};
  CHECK(io::read_image_registry(io::write_image_registry(reg)) == reg);
}

TEST_CASE("sample_pixels follows the density") {
  const std::vector<double> v{0.1, 0.2, 0.3, 0.4};
  const auto d = normalize({1, 4}, v);
  std::mt19937_64 rng(4);
  const std::size_t n = 200000;
  std::vector<double> counts(4, 0.0);
  for (auto p : sample_pixels(d, n, rng)) counts[p] += 1.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double se = std::sqrt(v[i] * (1 - v[i]) / n);
    CHECK(std::abs(counts[i] / n - v[i]) < 5 * se);
  }
  const auto fs = sample_fixations(d, "x", 100, rng);
  for (const auto& f : fs) CHECK(f.pixel({1, 4}) < 4);
}

TEST_CASE("Gaussian kernel sums to one and blur preserves uniform maps") {
  for (double sigma : {0.05, 0.5, 1.0, 2.7, 10.0}) {
    const GaussianKernel k(sigma);
    double s = 0.0;
    for (double w : k.weights) s += w;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    const std::vector<double> flat(6 * 5, 0.3);
    for (double v : gaussian_blur(flat, {6, 5}, sigma)) CHECK(v == doctest::Approx(0.3).epsilon(1e-13));
  }
}

TEST_CASE("separable blur equals the direct 2-D convolution with mirror padding") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double sigma : {0.6, 1.5, 4.0}) {
    const Shape shape{5, 7};
    std::vector<double> v(shape.size());
    for (double& x : v) x = u(rng);
    const auto fast = gaussian_blur(v, shape, sigma);
    const auto slow = oracle::blur_2d(v, shape, sigma);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-12));
  }
}

TEST_CASE("blur adjoint satisfies <Bx, y> = <x, B'y>") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n;
  const Shape shape{6, 4};
  const GaussianKernel k(1.7);
  std::vector<double> x(shape.size()), y(shape.size());
  for (double& v : x) v = n(rng);
  for (double& v : y) v = n(rng);
  const auto bx = separable_blur(x, shape, k.weights);
  const auto bty = separable_blur_adjoint(y, shape, k.weights);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lhs += bx[i] * y[i];
    rhs += x[i] * bty[i];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("blur sigma derivative matches finite differences") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  const Shape shape{5, 6};
  std::vector<double> x(shape.size());
  for (double& v : x) v = n(rng);
  const double sigma = 1.3, h = 1e-5;  // radius stays at ceil(4 sigma) = 6 on both sides
  const auto d = gaussian_blur_sigma_derivative(x, shape, GaussianKernel(sigma));
  const auto up = gaussian_blur(x, shape, sigma + h);
  const auto down = gaussian_blur(x, shape, sigma - h);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(d[i] == doctest::Approx((up[i] - down[i]) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("reflect_index handles radii larger than the axis") {
  CHECK(reflect_index(-1, 3) == 0);
  CHECK(reflect_index(-3, 3) == 2);
  CHECK(reflect_index(3, 3) == 2);
  CHECK(reflect_index(7, 3) == 1);
  CHECK(reflect_index(-5, 1) == 0);
  for (long i = -20; i < 20; ++i) CHECK(reflect_index(i, 4) == oracle::mirror(i, 4));
}

TEST_CASE("dump_json prints 17 significant digits and sorted keys") {
  const nlohmann::json j = {{"b", 0.1}, {"a", 1.0}, {"c", {1, 2}}, {"n", std::nan("")}};
  const std::string s = dump_json(j, -1);
  CHECK(s == "{\"a\":1.0,\"b\":0.10000000000000001,\"c\":[1,2],\"n\":null}\n");
  CHECK(nlohmann::json::parse(s)["b"].get<double>() == 0.1);
}

TEST_CASE("parallel_for is independent of the worker count and reports the lowest failing index") {
  ::setenv("GAZEKIT_THREADS", "8", 1);
  CHECK(thread_count() == 8);
  std::vector<double> slots(1000);
  parallel_for(slots.size(), [&](std::size_t i) { slots[i] = std::sqrt(static_cast<double>(i)); });
  for (std::size_t i = 0; i < slots.size(); ++i) CHECK(slots[i] == std::sqrt(static_cast<double>(i)));
  for (int rep = 0; rep < 5; ++rep) {
    std::string message;
    try {
      parallel_for(64, [](std::size_t i) {
        if (i % 7 == 3) throw Error(ErrorCode::BadValue, std::to_string(i));
      });
    } catch (const Error& e) {
      message = e.what();
    }
    CHECK(message == "BadValue: 3");
  }
  ::unsetenv("GAZEKIT_THREADS");
}
