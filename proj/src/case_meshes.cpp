#include <cmath>
#include <numbers>

#include "pisoflow/mesh.hpp"

namespace pisoflow {

std::string to_string(MeshKind k) {
  switch (k) {
    case MeshKind::Cavity: return "cavity";
    case MeshKind::Channel: return "channel";
    case MeshKind::Poiseuille: return "poiseuille";
    case MeshKind::PeriodicBox: return "periodic_box";
    case MeshKind::BackwardFacingStep: return "bfs";
    case MeshKind::VortexStreet: return "vortex_street";
  }
  return "cavity";
}

MeshKind parse_mesh_kind(const std::string& s) {
  for (auto k : {MeshKind::Cavity, MeshKind::Channel, MeshKind::Poiseuille, MeshKind::PeriodicBox,
                 MeshKind::BackwardFacingStep, MeshKind::VortexStreet})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown mesh kind '" + s + "'");
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw MeshError(what);
}

void check_resolution(const MeshParams& p) {
  require(p.dim == 2 || p.dim == 3, "mesh dimension must be 2 or 3");
  for (int a = 0; a < p.dim; ++a) require(p.resolution[a] >= 2, "resolution must be at least 2 per axis");
}

std::array<std::vector<double>, 3> uniform_lines(const MeshParams& p) {
  std::array<std::vector<double>, 3> l;
  for (int a = 0; a < p.dim; ++a) l[a] = uniform_coords(p.resolution[a], 0.0, p.size[a]);
  return l;
}

// Parabolic profile across [0, height] with the given mean.
std::vector<double> parabolic_inflow(const BlockSpec& b, int side, double height, double y0, double mean) {
  const int nf = b.num_faces(side);
  std::vector<double> v(static_cast<std::size_t>(nf) * b.dim, 0.0);
  const int ny = b.resolution[1];
  const int nx1 = b.resolution[0] + 1;
  for (int f = 0; f < nf; ++f) {
    const int j = f % ny;
    const double ya = b.vertices[(j * nx1) * b.dim + 1], yb = b.vertices[((j + 1) * nx1) * b.dim + 1];
    const double s = (0.5 * (ya + yb) - y0) / height;
    v[f * b.dim] = 6.0 * mean * s * (1.0 - s);
  }
  return v;
}

Domain cavity(const MeshParams& p) {
  check_resolution(p);
  std::array<std::vector<double>, 3> l;
  for (int a = 0; a < p.dim; ++a)
    l[a] = p.refinement_base > 1.0 ? refined_coords_both(p.resolution[a], 0.0, p.size[a], p.refinement_base)
                                   : uniform_coords(p.resolution[a], 0.0, p.size[a]);
  BlockSpec b = make_block(p.dim, l);
  require(p.lid_side >= 0 && p.lid_side < 2 * p.dim, "lid side out of range");
  for (int s = 0; s < 2 * p.dim; ++s) set_dirichlet(b, s, {0, 0, 0});
  std::array<double, 3> lid{0, 0, 0};
  lid[side_axis(p.lid_side) == 0 ? 1 : 0] = p.lid_velocity;
  set_dirichlet(b, p.lid_side, lid);
  b.name = "cavity";
  return Domain({b});
}

Domain channel(const MeshParams& p) {
  check_resolution(p);
  require(p.refinement_base >= 1.0, "refinement base must be at least 1");
  auto l = uniform_lines(p);
  l[1] = p.refinement_base > 1.0 ? refined_coords_both(p.resolution[1], 0.0, p.size[1], p.refinement_base)
                                 : uniform_coords(p.resolution[1], 0.0, p.size[1]);
  BlockSpec b = make_block(p.dim, l);
  set_periodic(b, 0, 0);
  set_dirichlet(b, 2, {0, 0, 0});
  set_dirichlet(b, 3, {0, 0, 0});
  if (p.dim == 3) set_periodic(b, 0, 2);
  b.name = "channel";
  return Domain({b});
}

Domain poiseuille(const MeshParams& p) {
  check_resolution(p);
  BlockSpec b = make_block(p.dim, uniform_lines(p));
  apply_rotational_distortion(b, p.distortion);
  set_periodic(b, 0, 0);
  set_dirichlet(b, 2, {0, 0, 0});
  set_dirichlet(b, 3, {0, 0, 0});
  if (p.dim == 3) set_periodic(b, 0, 2);
  b.name = "poiseuille";
  return Domain({b});
}

Domain periodic_box(const MeshParams& p) {
  check_resolution(p);
  BlockSpec b = make_block(p.dim, uniform_lines(p));
  for (int a = 0; a < p.dim; ++a) set_periodic(b, 0, a);
  b.name = "box";
  return Domain({b});
}

// Inlet duct above the step, then a main section and a buffer, each split at
// the step height so every block side carries a single boundary condition.
Domain backward_facing_step(const MeshParams& p) {
  require(p.dim == 2, "the step case is two-dimensional");
  require(p.resolution[0] >= 1 && p.resolution[1] >= 1, "resolution must be positive");
  const double h = p.step_height;
  const int cx = p.resolution[0], cy = p.resolution[1];
  const auto nx = [&](double len) { return std::max(2, static_cast<int>(std::lround(len / h * cx))); };
  const auto xs_in = uniform_coords(nx(p.inlet_length), -p.inlet_length * h, 0.0);
  const auto xs_main = uniform_coords(nx(p.channel_length), 0.0, p.channel_length * h);
  const auto xs_buf = uniform_coords(nx(p.buffer_length), p.channel_length * h, (p.channel_length + p.buffer_length) * h);
  const auto ys_lo = uniform_coords(std::max(2, cy), 0.0, h);
  const auto ys_hi = uniform_coords(std::max(2, cy), h, 2.0 * h);

  std::vector<BlockSpec> blocks(5);
  blocks[0] = make_block(2, {xs_in, ys_hi, {}});
  blocks[1] = make_block(2, {xs_main, ys_hi, {}});
  blocks[2] = make_block(2, {xs_main, ys_lo, {}});
  blocks[3] = make_block(2, {xs_buf, ys_hi, {}});
  blocks[4] = make_block(2, {xs_buf, ys_lo, {}});
  const char* names[] = {"inlet", "main_upper", "main_lower", "buffer_upper", "buffer_lower"};
  for (int i = 0; i < 5; ++i) {
    blocks[i].name = names[i];
    for (int s = 0; s < 4; ++s) set_dirichlet(blocks[i], s, {0, 0, 0});
  }
  blocks[0].boundaries[0] = Dirichlet{parabolic_inflow(blocks[0], 0, h, h, p.inflow_velocity)};
  connect_blocks(blocks, 0, 1, 1, 0);
  connect_blocks(blocks, 1, 2, 2, 3);
  connect_blocks(blocks, 1, 1, 3, 0);
  connect_blocks(blocks, 2, 1, 4, 0);
  connect_blocks(blocks, 3, 2, 4, 3);
  const double um = 0.5 * p.inflow_velocity;
  blocks[3].boundaries[1] = AdvectiveOutflow{um, {}};
  blocks[4].boundaries[1] = AdvectiveOutflow{um, {}};
  for (int i : {3, 4}) {
    auto& b = blocks[i];
    b.viscosity_scale.assign(b.num_cells(), 1.0);
    for (int j = 0; j < b.resolution[1]; ++j)
      for (int k = 0; k < b.resolution[0]; ++k) {
        const double s = (k + 0.5) / b.resolution[0];
        b.viscosity_scale[k + b.resolution[0] * j] = 1.0 + (p.buffer_viscosity_scale - 1.0) * s;
      }
  }
  return Domain(std::move(blocks));
}

// 3x3 block arrangement around a square obstacle; the centre block is omitted
// and its sides become no-slip walls.
Domain vortex_street(const MeshParams& p) {
  require(p.dim == 2, "the vortex street case is two-dimensional");
  const double lx = p.size[0] > 1.0 ? p.size[0] : 16.0, ly = p.size[1] > 1.0 ? p.size[1] : 8.0;
  const double w = p.obstacle_width, cx = p.obstacle_x, cy = 0.5 * ly;
  const std::array<double, 4> xs{0.0, cx - 0.5 * w, cx + 0.5 * w, lx};
  const std::array<double, 4> ys{0.0, cy - 0.5 * w, cy + 0.5 * w, ly};
  const auto cells = [](double len, int per_unit) { return std::max(2, static_cast<int>(std::lround(len * per_unit))); };
  std::vector<BlockSpec> blocks;
  std::array<std::array<int, 3>, 3> id{};
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) {
      id[j][i] = -1;
      if (i == 1 && j == 1) continue;
      id[j][i] = static_cast<int>(blocks.size());
      auto b = make_block(2, {uniform_coords(cells(xs[i + 1] - xs[i], p.resolution[0]), xs[i], xs[i + 1]),
                              uniform_coords(cells(ys[j + 1] - ys[j], p.resolution[1]), ys[j], ys[j + 1]), {}});
      for (int s = 0; s < 4; ++s) set_dirichlet(b, s, {0, 0, 0});
      b.name = "block_" + std::to_string(i) + std::to_string(j);
      blocks.push_back(std::move(b));
    }
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) {
      const int b = id[j][i];
      if (b < 0) continue;
      if (i + 1 < 3 && id[j][i + 1] >= 0) connect_blocks(blocks, b, 1, id[j][i + 1], 0);
      if (j + 1 < 3 && id[j + 1][i] >= 0) connect_blocks(blocks, b, 3, id[j + 1][i], 2);
      if (i == 0) set_dirichlet(blocks[b], 0, {p.inflow_velocity, 0, 0});
      if (i == 2) blocks[b].boundaries[1] = AdvectiveOutflow{p.inflow_velocity, {}};
      if (j == 0) set_dirichlet(blocks[b], 2, {p.inflow_velocity, 0, 0});
      if (j == 2) set_dirichlet(blocks[b], 3, {p.inflow_velocity, 0, 0});
    }
  return Domain(std::move(blocks));
}

}  // namespace

Domain generate_case_mesh(MeshKind kind, const MeshParams& params) {
  switch (kind) {
    case MeshKind::Cavity: return cavity(params);
    case MeshKind::Channel: return channel(params);
    case MeshKind::Poiseuille: return poiseuille(params);
    case MeshKind::PeriodicBox: return periodic_box(params);
    case MeshKind::BackwardFacingStep: return backward_facing_step(params);
    case MeshKind::VortexStreet: return vortex_street(params);
  }
  throw MeshError("unknown mesh kind");
}

}  // namespace pisoflow
