#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "pisoflow/piso.hpp"

using namespace pisoflow;

namespace {

std::span<const double> cs(const std::vector<double>& v) { return {v.data(), v.size()}; }

double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Straight-line evaluation of one step on a periodic grid of unit cells with
// dense solves. Returns {u, p}.
std::pair<std::vector<double>, std::vector<double>> reference_step(int nx, int ny, const std::vector<double>& u0,
                                                                  const std::vector<double>& S, double nu,
                                                                  double dt, int correctors) {
  const int n = nx * ny;
  const auto id = [&](int i, int j) { return ((i + nx) % nx) + nx * ((j + ny) % ny); };
  std::vector<double> C(n * n, 0.0);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int P = id(i, j);
      C[P * n + P] += 1.0 / dt;
      const int nbr[4] = {id(i - 1, j), id(i + 1, j), id(i, j - 1), id(i, j + 1)};
      for (int f = 0; f < 4; ++f) {
        const int axis = f / 2;
        const double N = (f % 2) ? 1.0 : -1.0;
        const int F = nbr[f];
        const double Uf = 0.5 * (u0[axis * n + P] + u0[axis * n + F]);
        C[P * n + P] += 0.5 * N * Uf + nu;
        C[P * n + F] += 0.5 * N * Uf - nu;
      }
    }
  std::vector<double> rhs(2 * n), u(2 * n);
  for (int k = 0; k < 2 * n; ++k) rhs[k] = u0[k] / dt + S[k];
  for (int c = 0; c < 2; ++c) {
    const auto x = testutil::dense_solve(C, std::vector<double>(rhs.begin() + c * n, rhs.begin() + (c + 1) * n));
    std::copy(x.begin(), x.end(), u.begin() + c * n);
  }
  std::vector<double> A(n);
  for (int P = 0; P < n; ++P) A[P] = C[P * n + P];
  // Pressure operator with the constant null space shifted away.
  std::vector<double> L(n * n, -1.0);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int P = id(i, j);
      for (int F : {id(i - 1, j), id(i + 1, j), id(i, j - 1), id(i, j + 1)}) {
        const double w = 0.5 * (1.0 / A[P] + 1.0 / A[F]);
        L[P * n + F] += w;
        L[P * n + P] -= w;
      }
    }
  std::vector<double> p(n, 0.0);
  for (int k = 0; k < correctors; ++k) {
    std::vector<double> h(2 * n);
    for (int c = 0; c < 2; ++c)
      for (int P = 0; P < n; ++P) {
        double s = rhs[c * n + P];
        for (int F = 0; F < n; ++F)
          if (F != P) s -= C[P * n + F] * u[c * n + F];
        h[c * n + P] = s / A[P];
      }
    std::vector<double> div(n, 0.0);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const int P = id(i, j);
        div[P] = 0.5 * (h[id(i + 1, j)] - h[id(i - 1, j)]) + 0.5 * (h[n + id(i, j + 1)] - h[n + id(i, j - 1)]);
      }
    p = testutil::dense_solve(L, div);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const int P = id(i, j);
        u[P] = h[P] - 0.5 * (p[id(i + 1, j)] - p[id(i - 1, j)]) / A[P];
        u[n + P] = h[n + P] - 0.5 * (p[id(i, j + 1)] - p[id(i, j - 1)]) / A[P];
      }
  }
  return {u, p};
}

}  // namespace

TEST_CASE("closed box at rest is a fixed point") {
  BlockSpec b = testutil::box(6, 6);
  for (int s = 0; s < 4; ++s) set_dirichlet(b, s, {0, 0, 0});
  Domain d({b});
  auto g = build_grid<double>(d);
  PisoSolver<double> solver(g, StepConfig{});
  auto st = zero_state(*g);
  st.p.assign(g->nc(), 0.0);
  for (int k = 0; k < 3; ++k) st = solver.step(st, {}, 0.1);
  CHECK(max_abs(st.u) < 1e-12);
  CHECK(max_abs(st.p) < 1e-12);
  CHECK(st.t == doctest::Approx(0.3));
}

TEST_CASE("single step matches a straight-line dense evaluation") {
  const int nx = 8, ny = 8;
  BlockSpec b = testutil::box(nx, ny, nx, ny);
  set_periodic(b, 0, 0);
  set_periodic(b, 0, 1);
  auto g = build_grid<double>(Domain({b}));
  const int n = g->nc();
  std::mt19937 rng(11);
  FlowState<double> st = zero_state(*g);
  st.u = testutil::random_vector(2 * n, rng);
  const auto S = testutil::random_vector(2 * n, rng, -0.1, 0.1);
  StepConfig cfg;
  cfg.viscosity = 0.05;
  cfg.set_tolerance(1e-13);
  PisoSolver<double> solver(g, cfg);
  const double dt = 0.2;
  const auto next = solver.step(st, cs(S), dt);
  const auto [u_ref, p_ref] = reference_step(nx, ny, st.u, S, cfg.viscosity, dt, cfg.correctors);
  double du = 0, dp = 0;
  for (int i = 0; i < 2 * n; ++i) du = std::max(du, std::abs(next.u[i] - u_ref[i]));
  for (int i = 0; i < n; ++i) dp = std::max(dp, std::abs(next.p[i] - p_ref[i]));
  CHECK(du < 1e-9 * std::max(1.0, max_abs(u_ref)));
  CHECK(dp < 1e-9 * std::max(1.0, max_abs(p_ref)));
}

TEST_CASE("divergence contract after two correctors") {
  MeshParams mp;
  mp.resolution = {16, 16, 1};
  mp.lid_velocity = 1.0;
  const Domain d = generate_case_mesh(MeshKind::Cavity, mp);
  auto g = build_grid<double>(d);
  StepConfig cfg;
  PisoSolver<double> solver(g, cfg);
  auto st = zero_state(*g);
  st.ub = initial_boundary_velocity<double>(d);
  for (int k = 0; k < 5; ++k) {
    StepReport rep;
    st = solver.step(st, {}, solver.stable_dt(st), nullptr, &rep);
    CHECK(rep.max_divergence <= 10 * cfg.pressure_solver.tolerance);
    CHECK(rep.velocity.size() == 2);
    CHECK(rep.pressure.size() == 2);
  }
  CHECK(max_abs(st.u) > 1e-3);
}

TEST_CASE("non-orthogonal meshes select extra correctors and keep the contract") {
  MeshParams mp;
  mp.resolution = {10, 10, 1};
  mp.distortion = 0.2;
  const Domain d = generate_case_mesh(MeshKind::Poiseuille, mp);
  auto g = build_grid<double>(d);
  CHECK(!g->orthogonal);
  StepConfig cfg;
  cfg.viscosity = 0.1;
  PisoSolver<double> solver(g, cfg);
  CHECK(solver.non_orthogonal_iterations() == 2);
  auto st = zero_state(*g);
  const std::vector<double> S = [&] {
    std::vector<double> s(2 * g->nc(), 0.0);
    std::fill(s.begin(), s.begin() + g->nc(), 1.0);
    return s;
  }();
  StepRecord<double> rec;
  StepReport rep;
  st = solver.step(st, cs(S), 0.1, &rec, &rep);
  CHECK(rep.max_divergence <= 10 * cfg.pressure_solver.tolerance);
  CHECK(rec.predictor_iterates.size() == 4);
  CHECK(rec.correctors.size() == 2);
  CHECK(rec.correctors[0].pressure_iterates.size() == 4);
  cfg.non_orthogonal_correctors = 0;
  CHECK(PisoSolver<double>(g, cfg).non_orthogonal_iterations() == 0);
}

TEST_CASE("single precision step") {
  MeshParams mp;
  mp.resolution = {8, 8, 1};
  mp.lid_velocity = 1.0;
  const Domain d = generate_case_mesh(MeshKind::Cavity, mp);
  auto g = build_grid<float>(d);
  StepConfig cfg;
  cfg.precision = Precision::Single;
  cfg.set_tolerance(1e-5);
  PisoSolver<float> solver(g, cfg);
  auto st = zero_state(*g);
  st.ub = initial_boundary_velocity<float>(d);
  StepReport rep;
  st = solver.step(st, {}, 0.1f, nullptr, &rep);
  CHECK(rep.max_divergence <= 1e-4);
  for (float v : st.u) CHECK(std::isfinite(v));
}

TEST_CASE("solver failures carry the stage label") {
  MeshParams mp;
  mp.resolution = {8, 8, 1};
  mp.lid_velocity = 1.0;
  const Domain d = generate_case_mesh(MeshKind::Cavity, mp);
  auto g = build_grid<double>(d);
  StepConfig cfg;
  cfg.velocity_solver.max_iterations = 1;
  cfg.velocity_solver.tolerance = 1e-15;
  PisoSolver<double> solver(g, cfg);
  auto st = zero_state(*g);
  st.ub = initial_boundary_velocity<double>(d);
  try {
    solver.step(st, {}, 0.5);
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(e.stage().rfind("predictor", 0) == 0);
  }
  StepConfig bad;
  bad.correctors = 0;
  CHECK_THROWS_AS(PisoSolver<double>(g, bad), std::invalid_argument);
  PisoSolver<double> ok(g, StepConfig{});
  CHECK_THROWS_AS(ok.step(st, {}, 0.0), std::invalid_argument);
}

TEST_CASE("gradient path and precision names round-trip") {
  for (auto p : {GradientPath::Full, GradientPath::AdvOnly, GradientPath::POnly, GradientPath::None})
    CHECK(parse_gradient_path(to_string(p)) == p);
  CHECK(parse_precision("single") == Precision::Single);
  CHECK_THROWS(parse_gradient_path("sideways"));
}
