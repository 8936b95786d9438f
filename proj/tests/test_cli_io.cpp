#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include "doctest.h"
#include "pisoflow/cli_io.hpp"

using namespace pisoflow;
namespace fs = std::filesystem;

namespace {

const char* kChannel = R"(# channel flow
[case]
name = tcf
seed = 4

[mesh]
kind = channel
dim = 3
resolution = 16, 16, 8
size = 6.283185307179586 2 3.141592653589793
refinement_base = 1.095

[fluid]
viscosity = auto
dynamic_forcing = true

[init]
kind = reichardt
re_tau = 550

[time]
cfl = 0.8
steps = 100

[stats]
enabled = true
start = 20
)";

fs::path temp_dir() {
  auto d = fs::temp_directory_path() / ("pisoflow_test_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

void expect_error_at(const std::string& text, int line, int column, const std::string& fragment) {
  try {
    parse_config(text);
    FAIL("expected a config error for: " << text);
  } catch (const ConfigError& e) {
    CHECK(e.line() == line);
    CHECK(e.column() == column);
    CHECK(std::string(e.what()).find(fragment) != std::string::npos);
  }
}

}  // namespace

TEST_CASE("minimal cavity config fills defaults") {
  const auto c = parse_config("[mesh]\nkind = cavity\n");
  CHECK(c.mesh == MeshKind::Cavity);
  CHECK(c.solver.correctors == 2);
  CHECK(c.solver.pressure_solver.tolerance == 1e-8);
  CHECK(c.solver.velocity_solver.tolerance == 1e-8);
  CHECK(c.solver.precision == Precision::Double);
  CHECK(c.time.cfl == 0.8);
  CHECK(c.time.dt == 0.0);
  CHECK(c.time.steps == 100);
  CHECK_FALSE(c.optimization);
  // A fixed step removes the CFL default.
  const auto d = parse_config("[mesh]\nkind = cavity\n[time]\ndt = 0.01\nhorizon = 2\n");
  CHECK(d.time.cfl == 0.0);
  CHECK(d.time.steps == 0);
  CHECK(d.time.horizon == 2.0);
}

TEST_CASE("config diagnostics carry locations") {
  expect_error_at("[fluid]\n  viscocity = 0.01\n", 2, 3, "unknown key 'viscocity'");
  expect_error_at("[fluids]\n", 1, 2, "unknown section");
  expect_error_at("[time]\ndt = 0.1x\n", 2, 6, "expected a number");
  expect_error_at("[mesh]\nresolution = 8 eight\n", 2, 16, "expected an integer");
  expect_error_at("[mesh]\nkind = cavity\nkind = channel\n", 3, 1, "duplicate key");
  expect_error_at("kind = cavity\n", 1, 1, "outside of a section");
  expect_error_at("[mesh]\nkind = pipe\n", 2, 8, "unknown mesh kind");
  expect_error_at("[mesh\n", 1, 1, "unterminated");
  expect_error_at("[mesh]\nkind\n", 2, 1, "expected 'key = value'");
  // Semantic validation is anchored at the key it names.
  expect_error_at("[mesh]\nkind = cavity\n[time]\ndt = 0.1\ncfl = 0.5\n", 4, 1, "time.dt");
  expect_error_at("[mesh]\nkind = cavity\n[optimize]\nparameter = initial_scale\n", 4, 1, "initial_scale");
  expect_error_at("[solver]\ncorrectors = 0\n", 1, 1, "corrector");
  expect_error_at("[mesh]\nkind = bfs\nresolution = 4 4\n[init]\nkind = rest\n", 5, 1, "outflow");
}

TEST_CASE("channel refinement propagates to the mesh") {
  const auto c = parse_config(kChannel);
  CHECK(c.mesh_params.refinement_base == 1.095);
  CHECK(c.mesh_params.resolution == std::array<int, 3>{16, 16, 8});
  CHECK(c.fluid.viscosity == 0.0);
  CHECK(effective_viscosity(c) == doctest::Approx(1.0 / centerline_reynolds(550)).epsilon(1e-14));
  const Domain d = generate_case_mesh(c.mesh, c.mesh_params);
  const auto& v = d.block(0).vertices;
  const int nx1 = c.mesh_params.resolution[0] + 1;
  const auto y = [&](int j) { return v[static_cast<std::size_t>(j * nx1) * 3 + 1]; };
  const double h0 = y(1) - y(0), h1 = y(2) - y(1);
  CHECK(h1 / h0 == doctest::Approx(1.095).epsilon(1e-12));
  CHECK(y(16) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("print and parse are a fixpoint") {
  std::vector<CaseConfig> configs{parse_config(kChannel), lid_task(Parameter::Viscosity),
                                  scaling_task(10, GradientPath::POnly, 0.001, 600)};
  auto odd = parse_config("[mesh]\nkind = bfs\nresolution = 4 4\n[init]\nkind = uniform\nvelocity = 1 0\n[solver]\nnon_orthogonal_correctors = 2\nprecision = single\n");
  configs.push_back(odd);
  for (const auto& c : configs) {
    const std::string a = print_config(c);
    const auto back = parse_config(a);
    CHECK(print_config(back) == a);
  }
  const auto v = parse_config(print_config(lid_task(Parameter::LidVelocity)));
  REQUIRE(v.optimization);
  CHECK(v.optimization->learning_rate == 6e-2);
  CHECK(v.optimization->parameter == Parameter::LidVelocity);
  CHECK(v.time.horizon == 10.0);
  CHECK(odd.solver.non_orthogonal_correctors == 2);
}

TEST_CASE("field dumps round-trip bit-exactly") {
  MeshParams mp;
  mp.resolution = {2, 2, 1};
  const Domain d = generate_case_mesh(MeshKind::BackwardFacingStep, mp);
  REQUIRE(d.num_blocks() == 5);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  FlowState<double> s;
  s.u.resize(2 * d.num_cells());
  s.p.resize(d.num_cells());
  s.ub.resize(2 * d.num_boundary_faces());
  for (auto* v : {&s.u, &s.p, &s.ub})
    for (auto& x : *v) x = nd(rng) * std::pow(10.0, static_cast<int>(nd(rng) * 20));
  s.u[0] = -0.0;
  s.u[1] = std::numeric_limits<double>::denorm_min();
  s.t = 1.0 / 3.0;

  const auto dump = make_dump(d, s);
  const auto back = decode_fields(encode_fields(dump));
  CHECK(back.precision == Precision::Double);
  CHECK(back.blocks == dump.blocks);
  CHECK(back.time == s.t);
  REQUIRE(back.fields.size() == 3);
  const auto& u = std::get<std::vector<double>>(back.field("velocity").values);
  CHECK(std::memcmp(u.data(), s.u.data(), u.size() * sizeof(double)) == 0);
  CHECK(std::get<std::vector<double>>(back.field("pressure").values) == s.p);
  CHECK(std::get<std::vector<double>>(back.field("boundary_velocity").values) == s.ub);
  CHECK(back.field("boundary_velocity").location == FieldLocation::BoundaryFace);

  const auto dir = temp_dir();
  const auto path = dir / "state.pfd";
  write_fields(path, dump);
  CHECK_FALSE(fs::exists(dir / "state.pfd.tmp"));
  CHECK(encode_fields(read_fields(path)) == encode_fields(dump));
  fs::remove_all(dir);
}

TEST_CASE("single precision dumps stay single") {
  MeshParams mp;
  mp.resolution = {3, 4, 1};
  const Domain d = generate_case_mesh(MeshKind::Cavity, mp);
  auto g = build_grid<float>(d);
  auto s = zero_state(*g);
  for (std::size_t i = 0; i < s.u.size(); ++i) s.u[i] = 0.1f * static_cast<float>(i);
  const auto back = decode_fields(encode_fields(make_dump(d, s)));
  CHECK(back.precision == Precision::Single);
  REQUIRE(std::holds_alternative<std::vector<float>>(back.field("velocity").values));
  CHECK(std::get<std::vector<float>>(back.field("velocity").values) == s.u);
  // A field whose storage disagrees with the header is refused.
  auto mixed = make_dump(d, s);
  mixed.fields[1].values = std::vector<double>(d.num_cells(), 0.0);
  CHECK_THROWS_AS(encode_fields(mixed), FormatError);
}

TEST_CASE("damaged dumps are rejected") {
  MeshParams mp;
  mp.resolution = {4, 4, 1};
  const Domain d = generate_case_mesh(MeshKind::Cavity, mp);
  auto g = build_grid<double>(d);
  auto s = zero_state(*g);
  s.p[3] = 2.5;
  const std::string bytes = encode_fields(make_dump(d, s));

  std::string flipped = bytes;
  flipped[bytes.size() - 20] ^= 0x10;
  CHECK_THROWS_WITH_AS(decode_fields(flipped), "field dump checksum mismatch", FormatError);
  CHECK_THROWS_WITH_AS(decode_fields(bytes.substr(0, bytes.size() - 9)), "field dump is truncated", FormatError);
  CHECK_THROWS_AS(decode_fields(bytes.substr(0, 10)), FormatError);
  std::string version = bytes;
  version[8] = 2;
  CHECK_THROWS_WITH_AS(decode_fields(version), "unsupported field dump version 2", FormatError);
  CHECK_THROWS_AS(decode_fields(bytes + "x"), FormatError);
  CHECK_THROWS_WITH_AS(decode_fields("not a dump at all"), "not a field dump", FormatError);

  FieldDump empty;
  CHECK_THROWS_AS(encode_fields(empty), FormatError);
  CHECK_THROWS_AS(write_fields(temp_dir() / "empty.pfd", empty), FormatError);
  CHECK_FALSE(fs::exists(temp_dir() / "empty.pfd"));
  fs::remove_all(temp_dir());
}

TEST_CASE("trace and ablation CSV") {
  OptimizationTrace t;
  t.loss = {1, 0.5};
  t.parameter = {0.5, 0.75};
  t.grad_norm = {2, 1};
  t.wall_time = {0.1, 0.2};
  t.backward_time = {0.05, 0.05};
  std::ostringstream os;
  trace_table(t).write(os);
  CHECK(os.str().rfind("iteration,loss,parameter,grad_norm,wall_time,backward_time\n0,1,0.5,2,", 0) == 0);

  AblationEntry e;
  e.path = GradientPath::None;
  e.steps = 100;
  e.trace = t;
  e.trace.diverged = true;
  const auto traces = ablation_traces_csv({e});
  CHECK(traces.find("none,100,0.01,1,0.5,0.75,1,0.2") != std::string::npos);
  const auto summary = ablation_summary_csv({e});
  CHECK(summary.rfind("path,n,learning_rate,time_to_threshold", 0) == 0);
  CHECK(summary.find("none,100,0.01,-1,") != std::string::npos);
}
