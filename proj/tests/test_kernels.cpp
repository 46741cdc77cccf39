#include <vector>

#include "aaf/kernels.hpp"
#include "aaf/random.hpp"
#include "doctest.h"

using namespace aaf::kernels;

namespace {

std::vector<double> random_values(aaf::Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

}  // namespace

TEST_CASE("parallel gemm matches the serial reference for every transpose combination") {
  aaf::Rng rng(7);
  const std::size_t sizes[][3] = {{1, 1, 1}, {3, 5, 7}, {64, 48, 80}, {130, 9, 33}};
  for (const auto& s : sizes) {
    const std::size_t m = s[0], n = s[1], k = s[2];
    for (Trans ta : {Trans::No, Trans::Yes}) {
      for (Trans tb : {Trans::No, Trans::Yes}) {
        for (bool acc : {false, true}) {
          const auto a = random_values(rng, m * k);
          const auto b = random_values(rng, k * n);
          auto c_ref = random_values(rng, m * n);
          auto c_par = c_ref;
          serial::gemm(ta, tb, m, n, k, a.data(), b.data(), c_ref.data(), acc);
          parallel::gemm(ta, tb, m, n, k, a.data(), b.data(), c_par.data(), acc);
          check_close(c_ref, c_par);
        }
      }
    }
  }
}

TEST_CASE("serial gemm computes a hand-checked product") {
  const double a[] = {1, 2};
  const double b[] = {3, 4};
  double c[1] = {0};
  serial::gemm(Trans::No, Trans::No, 1, 1, 2, a, b, c, false);
  CHECK(c[0] == 11.0);
}

TEST_CASE("im2col and col2im agree across implementations") {
  aaf::Rng rng(11);
  const ConvGeometry geos[] = {{8, 8, 3, 3, 2, 1}, {9, 7, 2, 3, 1, 1}, {16, 16, 4, 1, 1, 0},
                               {5, 5, 1, 3, 2, 0}};
  for (const ConvGeometry& g : geos) {
    const auto image = random_values(rng, g.height * g.width * g.channels);
    std::vector<double> ref(g.out_height() * g.out_width() * g.patch_size());
    auto par = ref;
    serial::im2col(g, image.data(), ref.data());
    parallel::im2col(g, image.data(), par.data());
    CHECK(ref == par);

    const auto cols = random_values(rng, ref.size());
    std::vector<double> back_ref(image.size(), 0.0), back_par(image.size(), 0.0);
    serial::col2im(g, cols.data(), back_ref.data());
    parallel::col2im(g, cols.data(), back_par.data());
    check_close(back_ref, back_par);
  }
}

TEST_CASE("col2im is the adjoint of im2col") {
  // <im2col(x), y> == <x, col2im(y)>
  aaf::Rng rng(3);
  const ConvGeometry g{6, 6, 2, 3, 2, 1};
  const auto x = random_values(rng, g.height * g.width * g.channels);
  const auto y = random_values(rng, g.out_height() * g.out_width() * g.patch_size());
  std::vector<double> cols(y.size()), back(x.size(), 0.0);
  parallel::im2col(g, x.data(), cols.data());
  parallel::col2im(g, y.data(), back.data());
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += cols[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("parallel kernels are deterministic") {
  aaf::Rng rng(5);
  const auto a = random_values(rng, 200 * 150);
  const auto b = random_values(rng, 150 * 120);
  std::vector<double> c1(200 * 120), c2(200 * 120);
  parallel::gemm(Trans::No, Trans::No, 200, 120, 150, a.data(), b.data(), c1.data(), false);
  parallel::gemm(Trans::No, Trans::No, 200, 120, 150, a.data(), b.data(), c2.data(), false);
  CHECK(c1 == c2);
}
