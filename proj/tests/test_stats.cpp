#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "pisoflow/adjoint.hpp"
#include "pisoflow/stats.hpp"

using namespace pisoflow;

namespace {

// Two-pass central moment of the given multi-index over row-major samples,
// evaluated in extended precision.
double two_pass(const std::vector<double>& x, int nvar, const std::vector<int>& e) {
  const std::size_t m = x.size() / nvar;
  std::vector<long double> mean(nvar, 0.0L);
  for (std::size_t s = 0; s < m; ++s)
    for (int v = 0; v < nvar; ++v) mean[v] += x[s * nvar + v];
  for (auto& v : mean) v /= static_cast<long double>(m);
  long double sum = 0;
  for (std::size_t s = 0; s < m; ++s) {
    long double p = 1;
    for (int v = 0; v < nvar; ++v)
      for (int k = 0; k < e[v]; ++k) p *= x[s * nvar + v] - mean[v];
    sum += p;
  }
  return static_cast<double>(sum / static_cast<long double>(m));
}

// Natural magnitude of a moment: prod sigma_v^e_v.
double moment_scale(const std::vector<double>& x, int nvar, const std::vector<int>& e) {
  double s = 1;
  for (int v = 0; v < nvar; ++v) {
    std::vector<int> two(nvar, 0);
    two[v] = 2;
    s *= std::pow(std::sqrt(two_pass(x, nvar, two)), e[v]);
  }
  return s;
}

std::vector<std::vector<int>> all_indices(int nvar, int order) {
  std::vector<std::vector<int>> out;
  std::vector<int> e(nvar, 0);
  while (true) {
    int t = 0;
    for (int v : e) t += v;
    if (t >= 2 && t <= order) out.push_back(e);
    int v = 0;
    while (v < nvar && e[v] == order) e[v++] = 0;
    if (v == nvar) break;
    ++e[v];
  }
  return out;
}

double max_rel(const MomentAccumulator& acc, const std::vector<double>& x, int nvar, int order) {
  double worst = 0;
  for (const auto& e : all_indices(nvar, order)) {
    const double ref = two_pass(x, nvar, e);
    worst = std::max(worst, std::abs(acc.central_moment(e) - ref) / moment_scale(x, nvar, e));
  }
  return worst;
}

Domain channel_domain(int dim, std::array<int, 3> res, double base = 1.0) {
  MeshParams mp;
  mp.dim = dim;
  mp.resolution = res;
  mp.size = {2.0, 2.0, 1.0};
  mp.refinement_base = base;
  return generate_case_mesh(MeshKind::Channel, mp);
}

}  // namespace

TEST_CASE("moment accumulator basics") {
  MomentAccumulator c(1, 4);
  for (int i = 0; i < 5; ++i) c.add(std::vector<double>{3.5});
  CHECK(c.variance(0) == 0.0);
  CHECK(c.central_moment(std::vector<int>{3}) == 0.0);
  CHECK(c.central_moment(std::vector<int>{4}) == 0.0);
  CHECK(std::isnan(c.skewness(0)));

  MomentAccumulator s(1, 2);
  for (double v : {1.0, 2.0, 3.0}) s.add(std::vector<double>{v});
  CHECK(s.mean()[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(s.variance(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  MomentAccumulator one(2, 2);
  one.add(std::vector<double>{1, 2});
  CHECK_THROWS_AS(one.covariance(0, 1), StatsError);
  CHECK_THROWS_AS(one.add(std::vector<double>{1}), std::invalid_argument);
  CHECK_THROWS_AS(one.central_moment(std::vector<int>{3, 0}), std::invalid_argument);
  CHECK_THROWS_AS(MomentAccumulator(2, 1), std::invalid_argument);
}

TEST_CASE("online moments up to order four match a two-pass evaluation") {
  const int nvar = 3, order = 4, m = 10000;
  std::mt19937 rng(21);
  std::gamma_distribution<double> skewed(2.0, 1.5);
  std::normal_distribution<double> normal(0, 1);
  std::vector<double> x(static_cast<std::size_t>(m) * nvar);
  for (int s = 0; s < m; ++s) {
    const double a = skewed(rng), b = normal(rng);
    x[s * nvar + 0] = 10 + a;
    x[s * nvar + 1] = -3 + 0.5 * a + b;
    x[s * nvar + 2] = 5 + 0.1 * b * b;
  }
  MomentAccumulator streamed(nvar, order);
  for (int s = 0; s < m; ++s) streamed.add(std::span<const double>(x).subspan(static_cast<std::size_t>(s) * nvar, nvar));
  CHECK(streamed.count() == m);
  CHECK(max_rel(streamed, x, nvar, order) <= 1e-12);

  MomentAccumulator batched(nvar, order);
  for (int s = 0; s < m; s += 937) {
    const int len = std::min(937, m - s);
    batched.add_batch(std::span<const double>(x).subspan(static_cast<std::size_t>(s) * nvar, static_cast<std::size_t>(len) * nvar));
  }
  CHECK(max_rel(batched, x, nvar, order) <= 1e-12);

  // Merge associativity: (A+B)+C and A+(B+C) agree with the whole stream.
  const auto part = [&](int lo, int hi) {
    MomentAccumulator a(nvar, order);
    a.add_batch(std::span<const double>(x).subspan(static_cast<std::size_t>(lo) * nvar, static_cast<std::size_t>(hi - lo) * nvar));
    return a;
  };
  auto left = part(0, 3000);
  left.merge(part(3000, 7100));
  left.merge(part(7100, m));
  auto bc = part(3000, 7100);
  bc.merge(part(7100, m));
  auto right = part(0, 3000);
  right.merge(bc);
  CHECK(max_rel(left, x, nvar, order) <= 1e-12);
  CHECK(max_rel(right, x, nvar, order) <= 1e-12);
  for (const auto& e : all_indices(nvar, order))
    CHECK(std::abs(left.central_moment(e) - right.central_moment(e)) <= 1e-12 * moment_scale(x, nvar, e));

  MomentAccumulator empty(nvar, order);
  auto copy = left;
  copy.merge(empty);
  CHECK(copy.central_moment(std::vector<int>{2, 1, 1}) == left.central_moment(std::vector<int>{2, 1, 1}));
  CHECK_THROWS_AS(copy.merge(MomentAccumulator(2, 4)), std::invalid_argument);
}

TEST_CASE("channel slices") {
  const Domain d = channel_domain(3, {4, 6, 3}, 1.2);
  const auto s = channel_slices(d);
  CHECK(s.size() == 6);
  CHECK(s.cells[0].size() == 12);
  CHECK(s.y_lower == doctest::Approx(0.0));
  CHECK(s.y_upper == doctest::Approx(2.0));
  double total = 0;
  for (int j = 0; j < 6; ++j) {
    total += s.dy[j];
    CHECK(s.y[j] == doctest::Approx(2.0 - s.y[5 - j]));
  }
  CHECK(total == doctest::Approx(2.0));
  CHECK(s.dy[0] < s.dy[2]);

  MeshParams mp;
  mp.resolution = {4, 4, 1};
  CHECK_THROWS_AS(channel_slices(generate_case_mesh(MeshKind::Cavity, mp)), StatsError);
}

TEST_CASE("friction velocity") {
  const Domain d = channel_domain(2, {4, 16, 1});
  const auto s = channel_slices(d);
  std::vector<double> lin(s.size()), para(s.size()), zero(s.size(), 0.0);
  // Channel spans [0, 2]; use the profile in the unit half [0, 1] scaled coordinates.
  for (int j = 0; j < s.size(); ++j) {
    lin[j] = std::min(s.y[j], 2.0 - s.y[j]);
    const double eta = s.y[j] / 2.0;
    para[j] = 0.5 * eta * (1 - eta);  // u = G/(2 nu) eta (1 - eta), G = nu = 1 in eta
  }
  CHECK(friction_velocity(s, lin, 1.0, 1.0).u_tau == doctest::Approx(1.0).epsilon(1e-12));
  // d/dy of para = 0.5 * (1 - 2 eta) / 2 -> 0.25 at the walls in y; 0.5 in eta.
  const auto f = friction_velocity(s, para, 1.0, 1.0);
  CHECK(f.wall_gradient == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(f.u_tau == doctest::Approx(std::sqrt(0.25)).epsilon(1e-12));
  CHECK(f.re_tau == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(friction_velocity(s, zero, 1.0, 1.0).u_tau == 0.0);
}

TEST_CASE("unit-channel Poiseuille wall slope") {
  MeshParams mp;
  mp.resolution = {4, 10, 1};
  const auto s = channel_slices(generate_case_mesh(MeshKind::Channel, mp));
  std::vector<double> u(s.size());
  for (int j = 0; j < s.size(); ++j) u[j] = 0.5 * s.y[j] * (1 - s.y[j]);
  const auto f = friction_velocity(s, u, 1.0, 0.5);
  CHECK(f.wall_gradient == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(f.u_tau == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
}

TEST_CASE("mirrored fields give mirrored statistics") {
  const Domain d = channel_domain(3, {5, 6, 4}, 1.1);
  const auto s = channel_slices(d);
  const int n = d.num_cells(), ny = 6;
  std::mt19937 rng(8);
  ChannelStatistics a(s), b(s);
  for (int f = 0; f < 4; ++f) {
    const auto u = testutil::random_vector(3 * static_cast<std::size_t>(n), rng);
    std::vector<double> m(u.size());
    for (int k = 0; k < 4; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < 5; ++i) {
          const int src = d.global_index({0, {i, j, k}}), dst = d.global_index({0, {i, ny - 1 - j, k}});
          for (int c = 0; c < 3; ++c) m[c * n + dst] = (c == 1 ? -1.0 : 1.0) * u[c * n + src];
        }
    a.add_frame(u);
    b.add_frame(m);
  }
  const auto pa = a.profile(0.01, 1.0), pb = b.profile(0.01, 1.0);
  const auto sign = [](int c) { return c == 1 ? -1.0 : 1.0; };
  for (int j = 0; j < ny; ++j) {
    const int mj = ny - 1 - j;
    CHECK(pb.y[mj] == doctest::Approx(2.0 - pa.y[j]));
    for (int c = 0; c < 3; ++c) {
      CHECK(pb.mean[c * ny + mj] == doctest::Approx(sign(c) * pa.mean[c * ny + j]).epsilon(1e-13));
      CHECK(pb.skewness[c * ny + mj] == doctest::Approx(sign(c) * pa.skewness[c * ny + j]).epsilon(1e-12));
      CHECK(pb.flatness[c * ny + mj] == doctest::Approx(pa.flatness[c * ny + j]).epsilon(1e-12));
      for (int e = 0; e < 3; ++e)
        CHECK(pb.cov[(c * 3 + e) * ny + mj] == doctest::Approx(sign(c) * sign(e) * pa.cov[(c * 3 + e) * ny + j]).epsilon(1e-12));
    }
  }
  CHECK(pb.friction.u_tau == doctest::Approx(pa.friction.u_tau).epsilon(1e-12));

  ChannelStatistics split1(s), split2(s);
  std::mt19937 r2(9);
  ChannelStatistics whole(s);
  for (int f = 0; f < 6; ++f) {
    const auto u = testutil::random_vector(3 * static_cast<std::size_t>(n), r2);
    whole.add_frame(u);
    (f < 2 ? split1 : split2).add_frame(u);
  }
  split1.merge(split2);
  CHECK(split1.frames() == 6);
  const auto pw = whole.profile(0.01, 1.0), ps = split1.profile(0.01, 1.0);
  for (std::size_t i = 0; i < pw.cov.size(); ++i) CHECK(ps.cov[i] == doctest::Approx(pw.cov[i]).epsilon(1e-12));
}

TEST_CASE("budget terms") {
  MeshParams mp;
  mp.resolution = {16, 8, 1};
  mp.size = {2.0, 1.0, 1.0};
  const Domain d = generate_case_mesh(MeshKind::Channel, mp);
  const auto g = build_grid<double>(d);
  const auto s = channel_slices(d);
  const int n = g->nc(), Y = s.size();
  const auto centers = cell_centers(d);

  SUBCASE("zero fluctuations") {
    std::vector<double> u(2 * n), p(n);
    for (int i = 0; i < n; ++i) {
      u[i] = std::sin(3 * centers[i][1]);
      u[n + i] = 0.2 * centers[i][1];
      p[i] = centers[i][1] * centers[i][1];
    }
    const std::vector<std::vector<double>> uf{u, u}, pf{p, p};
    const auto b = budget_terms(*g, s, uf, pf);
    CHECK(b.pairs.size() == 3);
    for (const auto* v : {&b.production, &b.dissipation, &b.transport, &b.diffusion, &b.pressure})
      for (double x : *v) CHECK(std::abs(x) <= 1e-14);
  }

  SUBCASE("production of a frozen sinusoidal fluctuation") {
    const double slope = 0.7, a = 0.3, bamp = 0.2, k = 2 * std::numbers::pi / 2.0;
    std::vector<double> u(2 * n), p(n, 0.0);
    for (int i = 0; i < n; ++i) {
      const double x = centers[i][0], y = centers[i][1];
      u[i] = slope * y + a * std::sin(k * x) * (1 + y);
      u[n + i] = bamp * std::sin(k * x) * y * y;
    }
    const std::vector<std::vector<double>> uf{u, u}, pf{p, p};
    const auto b = budget_terms(*g, s, uf, pf);
    for (int j = 1; j < Y - 1; ++j) {
      const double y = s.y[j];
      const double uv = a * bamp * (1 + y) * y * y / 2;
      CHECK(b.production[0 * Y + j] == doctest::Approx(-2 * uv * slope).epsilon(1e-10));
      // Production of <v'v'> vanishes: the mean has no wall-normal component.
      CHECK(std::abs(b.production[2 * Y + j]) <= 1e-14);
      CHECK(std::abs(b.pressure[j]) <= 1e-14);
    }
    CHECK_THROWS_AS(budget_terms(*g, s, std::vector<std::vector<double>>{u}, std::vector<std::vector<double>>{}),
                    std::invalid_argument);
  }
}

TEST_CASE("statistics loss") {
  SUBCASE("single-slice toy by hand") {
    SliceMoments f = SliceMoments::zeros(2, 1), ref = SliceMoments::zeros(2, 1);
    f.mean = {1.0, 0.5};
    f.cov = {0.2, 0.1, 0.1, 0.3};
    ref.mean = {0.5, 0.5};
    ref.cov = {0.1, 0.0, 0.0, 0.3};
    LossWeights w = LossWeights::channel();
    const std::vector<SliceMoments> frames{f};
    // Window equals the frame, so the per-frame term scales the same mismatch.
    const double base = 1.0 * 0.25 + 1.0 * 0.01 + 1.0 * 0.01;  // U0, uu, uv (vu weight 0)
    CHECK(stats_loss(frames, ref, w) == doctest::Approx(base * 1.5).epsilon(1e-14));
    const std::vector<SliceMoments> same{ref, ref};
    CHECK(stats_loss(same, ref, w) == 0.0);
    LossWeights bad;
    bad.per_frame = -1;
    CHECK_THROWS_AS(stats_loss(frames, ref, bad), std::invalid_argument);
    CHECK_THROWS_AS(stats_loss(frames, SliceMoments::zeros(2, 3), w), StatsError);
  }

  SUBCASE("channel weight set") {
    const auto w = LossWeights::channel();
    CHECK(w.per_frame == 0.5);
    CHECK(w.mean[0] == 1.0);
    CHECK(w.mean[1] == 0.5);
    CHECK(w.mean[2] == 0.5);
    CHECK(w.cov[0] == 1.0);
    CHECK(w.cov[4] == 1.0);
    CHECK(w.cov[8] == 1.0);
    CHECK(w.cov[1] == 1.0);
  }

  SUBCASE("gradient through the frame moments matches finite differences") {
    const Domain d = channel_domain(2, {5, 4, 1});
    const auto s = channel_slices(d);
    const int n = d.num_cells(), frames = 3;
    std::mt19937 rng(31);
    const auto x0 = testutil::random_vector(static_cast<std::size_t>(frames) * 2 * n, rng);
    SliceMoments ref = SliceMoments::zeros(2, s.size());
    for (auto& v : ref.mean) v = 0.1;
    for (auto& v : ref.cov) v = 0.05;
    LossWeights w = LossWeights::channel();
    const auto split = [&](const std::vector<double>& x) {
      std::vector<SliceMoments> m;
      for (int f = 0; f < frames; ++f) m.push_back(slice_moments(s, std::span<const double>(x).subspan(f * 2 * n, 2 * n)));
      return m;
    };
    const auto fwd = [&](const std::vector<double>& x) { return std::vector<double>{stats_loss(split(x), ref, w)}; };
    const auto vjp = [&](const std::vector<double>& c) {
      std::vector<SliceMoments> gm;
      stats_loss(split(x0), ref, w, &gm);
      std::vector<double> dx(x0.size(), 0.0);
      for (int f = 0; f < frames; ++f) {
        for (auto& v : gm[f].mean) v *= c[0];
        for (auto& v : gm[f].cov) v *= c[0];
        slice_moments_backward(s, std::span<const double>(x0).subspan(f * 2 * n, 2 * n), gm[f],
                               std::span<double>(dx).subspan(f * 2 * n, 2 * n));
      }
      return dx;
    };
    const auto r = gradcheck("stats_loss", fwd, vjp, x0, {1.3});
    CHECK(r.max_rel_error < 1e-7);
  }
}

TEST_CASE("aggregate error") {
  const std::vector<double> dy{0.25, 0.75};
  const std::vector<std::vector<double>> ref{{2.0, 4.0}}, sim{{1.0, 2.0}};
  CHECK(aggregate_error(sim, ref, dy) == doctest::Approx((1.0 * 0.25 + 4.0 * 0.75) / 4.0));
  CHECK(aggregate_error(ref, ref, dy) == 0.0);
  const std::vector<std::vector<double>> ref2{{1.0, 1.0}, {2.0, -4.0}}, sim1{{1.5, 1.0}, {2.0, -4.0}},
      sim2{{2.0, 1.0}, {2.0, -4.0}};
  CHECK(aggregate_error(sim2, ref2, dy) == doctest::Approx(4 * aggregate_error(sim1, ref2, dy)));
  const std::vector<std::vector<double>> zero{{0.0, 0.0}};
  CHECK_THROWS_AS(aggregate_error(sim, zero, dy), StatsError);
}

TEST_CASE("vorticity, correlations and skin friction") {
  MeshParams mp;
  mp.resolution = {8, 8, 1};
  const Domain d = generate_case_mesh(MeshKind::Channel, mp);
  const auto g = build_grid<double>(d);
  const int n = g->nc();
  const auto centers = cell_centers(d);
  std::vector<double> u(2 * n);
  for (int i = 0; i < n; ++i) {
    u[i] = centers[i][1];  // shear flow u = y
    u[n + i] = 0;
  }
  const auto w = vorticity(*g, u);
  // Interior cells see the exact central difference of a linear field.
  for (int j = 1; j < 7; ++j)
    for (int i = 0; i < 8; ++i) CHECK(w[d.global_index({0, {i, j, 0}})] == doctest::Approx(-1.0).epsilon(1e-12));

  std::mt19937 rng(2);
  const auto a = testutil::random_vector(50, rng), b = testutil::random_vector(50, rng);
  std::vector<double> neg(a);
  for (auto& v : neg) v = -v;
  CHECK(vorticity_correlation(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(vorticity_correlation(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(vorticity_correlation(a, b) ==
        doctest::Approx(testutil::dot(a, b) / std::sqrt(testutil::dot(a, a) * testutil::dot(b, b))).epsilon(1e-14));
  CHECK_THROWS_AS(vorticity_correlation(a, std::vector<double>(50, 0.0)), StatsError);

  // Temporal correlation against a direct evaluation.
  const int T = 12, P = 3, lag = 2;
  const auto sa = testutil::random_vector(T * P, rng), sb = testutil::random_vector(T * P, rng);
  std::vector<double> ma(P, 0.0), mb(P, 0.0);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < P; ++k) {
      ma[k] += sa[t * P + k] / T;
      mb[k] += sb[t * P + k] / T;
    }
  double num = 0, va = 0, vb = 0;
  for (int t = 0; t + lag < T; ++t)
    for (int k = 0; k < P; ++k) {
      const double x = sa[t * P + k] - ma[k], y = sb[(t + lag) * P + k] - mb[k];
      num += x * y;
      va += x * x;
      vb += y * y;
    }
  const auto R = temporal_correlation(sa, sb, P, 4);
  CHECK(R.size() == 5);
  CHECK(R[lag] == doctest::Approx(num / std::sqrt(va * vb)).epsilon(1e-13));
  CHECK(temporal_correlation(sa, sa, P, 0)[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(temporal_correlation(sa, sb, P, T), std::invalid_argument);

  // Skin friction of the shear flow on the lower wall: tau = nu * 1.
  const std::vector<double> ub(2 * static_cast<std::size_t>(d.num_boundary_faces()), 0.0);
  const auto cf = skin_friction(d, u, ub, 0, 2, 0.5, 2.0);
  CHECK(cf.size() == 8);
  for (double c : cf) CHECK(c == doctest::Approx(0.5 / (0.5 * 4.0)).epsilon(1e-12));
}

TEST_CASE("CSV tables") {
  const auto t = correlation_table(std::vector<double>{1.0, 0.5}, 0.1);
  std::ostringstream os;
  t.write(os);
  CHECK(os.str() == "lag,value\n0,1\n0.10000000000000001,0.5\n");
  const Domain d = channel_domain(2, {4, 4, 1});
  ChannelStatistics st(channel_slices(d), 2);
  std::mt19937 rng(1);
  st.add_frame(testutil::random_vector(2 * static_cast<std::size_t>(d.num_cells()), rng));
  const auto p = profile_table(st.profile(0.1, 1.0));
  CHECK(p.header == std::vector<std::string>{"y", "y_plus", "mean_u", "mean_v", "uu", "uv", "vv"});
  CsvTable bad{{"a"}, {{1.0}, {2.0}}};
  std::ostringstream sink;
  CHECK_THROWS_AS(bad.write(sink), std::invalid_argument);
}
