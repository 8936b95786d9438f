#include "pisoflow/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace pisoflow {

namespace {

int tangential_axes(int dim, int side, std::array<int, 2>& out) {
  int n = 0;
  for (int a = 0; a < dim; ++a)
    if (a != side_axis(side)) out[n++] = a;
  return n;
}

int vertex_index(const BlockSpec& b, int i, int j, int k) {
  return i + (b.resolution[0] + 1) * (j + (b.resolution[1] + 1) * k);
}

std::array<double, 3> vertex(const BlockSpec& b, int i, int j, int k) {
  std::array<double, 3> v{0, 0, 0};
  const int idx = vertex_index(b, i, j, k);
  for (int c = 0; c < b.dim; ++c) v[c] = b.vertices[idx * b.dim + c];
  return v;
}

// Average edge vector along `axis` over the edges selected by `fixed`
// (axis -> fixed vertex offset, -1 for free).
std::array<double, 3> mean_edge(const BlockSpec& b, const std::array<int, 3>& cell, int axis,
                                const std::array<int, 3>& fixed) {
  std::array<double, 3> sum{0, 0, 0};
  int count = 0;
  for (int mask = 0; mask < (1 << b.dim); ++mask) {
    if (mask & (1 << axis)) continue;
    std::array<int, 3> off{0, 0, 0};
    bool valid = true;
    for (int a = 0; a < b.dim; ++a) {
      if (a == axis) continue;
      const int o = (mask >> a) & 1;
      if (fixed[a] >= 0) {
        if (o != 0) valid = false;
        off[a] = fixed[a];
      } else {
        off[a] = o;
      }
    }
    if (!valid) continue;
    std::array<int, 3> lo{cell[0] + off[0], cell[1] + off[1], cell[2] + off[2]};
    std::array<int, 3> hi = lo;
    lo[axis] = cell[axis];
    hi[axis] = cell[axis] + 1;
    const auto p0 = vertex(b, lo[0], lo[1], lo[2]);
    const auto p1 = vertex(b, hi[0], hi[1], hi[2]);
    for (int c = 0; c < 3; ++c) sum[c] += p1[c] - p0[c];
    ++count;
  }
  for (auto& s : sum) s /= count;
  return sum;
}

Mat3 identity_padded(int dim) {
  Mat3 m{};
  for (int a = dim; a < 3; ++a) m[a * 3 + a] = 1.0;
  return m;
}

}  // namespace

std::string side_name(int side) {
  static const char* names[] = {"-x", "+x", "-y", "+y", "-z", "+z"};
  if (side < 0 || side > 5) throw std::out_of_range("side index out of range");
  return names[side];
}

int parse_side(const std::string& name) {
  for (int s = 0; s < 6; ++s)
    if (side_name(s) == name) return s;
  throw std::invalid_argument("unknown side '" + name + "'");
}

int BlockSpec::num_cells() const {
  int n = 1;
  for (int a = 0; a < dim; ++a) n *= resolution[a];
  return n;
}

int BlockSpec::num_vertices() const {
  int n = 1;
  for (int a = 0; a < dim; ++a) n *= resolution[a] + 1;
  return n;
}

int BlockSpec::num_faces(int side) const {
  int n = 1;
  for (int a = 0; a < dim; ++a)
    if (a != side_axis(side)) n *= resolution[a];
  return n;
}

bool FrameMap::is_identity() const {
  for (int a = 0; a < 3; ++a)
    if (axis[a] != a || sign[a] != 1) return false;
  return true;
}

double det(const Mat3& m, int dim) {
  if (dim == 1) return m[0];
  if (dim == 2) return m[0] * m[4] - m[1] * m[3];
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 inverse(const Mat3& m, int dim) {
  const double d = det(m, dim);
  if (d == 0.0) throw MeshError("singular transformation");
  Mat3 r{};
  if (dim == 2) {
    r[0] = m[4] / d;
    r[1] = -m[1] / d;
    r[3] = -m[3] / d;
    r[4] = m[0] / d;
    return r;
  }
  r[0] = (m[4] * m[8] - m[5] * m[7]) / d;
  r[1] = (m[2] * m[7] - m[1] * m[8]) / d;
  r[2] = (m[1] * m[5] - m[2] * m[4]) / d;
  r[3] = (m[5] * m[6] - m[3] * m[8]) / d;
  r[4] = (m[0] * m[8] - m[2] * m[6]) / d;
  r[5] = (m[2] * m[3] - m[0] * m[5]) / d;
  r[6] = (m[3] * m[7] - m[4] * m[6]) / d;
  r[7] = (m[1] * m[6] - m[0] * m[7]) / d;
  r[8] = (m[0] * m[4] - m[1] * m[3]) / d;
  return r;
}

FaceMetrics metrics_from_jacobian(const Mat3& dx_dxi, int dim) {
  FaceMetrics f;
  f.J = det(dx_dxi, dim);
  if (!(f.J > 0.0)) throw MeshError("non-positive cell volume");
  f.T = inverse(dx_dxi, dim);
  for (int j = 0; j < dim; ++j)
    for (int k = j; k < dim; ++k) {
      double s = 0;
      for (int i = 0; i < dim; ++i) s += f.T[j * 3 + i] * f.T[k * 3 + i];
      f.alpha[j * 3 + k] = f.alpha[k * 3 + j] = f.J * s;
    }
  return f;
}

Domain::Domain(std::vector<BlockSpec> blocks) : blocks_(std::move(blocks)) {
  if (blocks_.empty()) throw MeshError("domain has no blocks");
  dim_ = blocks_.front().dim;
  validate();
  cell_offset_.resize(blocks_.size());
  bface_offset_.resize(blocks_.size());
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    cell_offset_[b] = num_cells_;
    num_cells_ += blocks_[b].num_cells();
    for (int s = 0; s < 6; ++s) {
      bface_offset_[b][s] = -1;
      if (s >= 2 * dim_ || std::holds_alternative<Connection>(blocks_[b].boundaries[s])) continue;
      bface_offset_[b][s] = num_bfaces_;
      num_bfaces_ += blocks_[b].num_faces(s);
    }
  }
  compute_metrics();
}

void Domain::validate() const {
  const int nb = num_blocks();
  if (dim_ != 2 && dim_ != 3) throw MeshError("only 2D and 3D domains are supported");
  for (int b = 0; b < nb; ++b) {
    const auto& blk = blocks_[b];
    if (blk.dim != dim_) throw MeshError("blocks of mixed dimension", b);
    for (int a = 0; a < dim_; ++a)
      if (blk.resolution[a] < 1) throw MeshError("block resolution must be positive", b);
    for (int a = dim_; a < 3; ++a)
      if (blk.resolution[a] != 1) throw MeshError("unused axes must have resolution 1", b);
    if (static_cast<int>(blk.vertices.size()) != blk.num_vertices() * dim_)
      throw MeshError("vertex array has wrong size", b);
    if (!blk.viscosity_scale.empty() && static_cast<int>(blk.viscosity_scale.size()) != blk.num_cells())
      throw MeshError("viscosity scale has wrong size", b);
    for (int s = 0; s < 2 * dim_; ++s) {
      const auto& bc = blk.boundaries[s];
      const auto check_velocity = [&](const std::vector<double>& v) {
        if (!v.empty() && static_cast<int>(v.size()) != blk.num_faces(s) * dim_)
          throw MeshError("boundary velocity on side " + side_name(s) + " has wrong size", b);
      };
      if (auto* d = std::get_if<Dirichlet>(&bc)) check_velocity(d->velocity);
      if (auto* o = std::get_if<AdvectiveOutflow>(&bc)) check_velocity(o->velocity);
      auto* c = std::get_if<Connection>(&bc);
      if (!c) continue;
      if (c->block < 0 || c->block >= nb || c->side < 0 || c->side >= 2 * dim_)
        throw MeshError("connection on side " + side_name(s) + " targets an invalid block/side", b);
      const auto& other = blocks_[c->block];
      const int na = side_axis(s);
      if (c->axis_map[na] != side_axis(c->side))
        throw MeshError("connection axis map must send the normal axis to the target normal", b);
      std::array<bool, 3> used{};
      for (int a = 0; a < dim_; ++a) {
        const int m = c->axis_map[a];
        if (m < 0 || m >= dim_ || used[m]) throw MeshError("connection axis map is not a permutation", b);
        used[m] = true;
        if (a != na && other.resolution[m] != blk.resolution[a])
          throw MeshError("connected sides have mismatched resolution", b);
      }
      auto* back = std::get_if<Connection>(&other.boundaries[c->side]);
      if (!back || back->block != b || back->side != s)
        throw MeshError("connection on side " + side_name(s) + " is not reciprocated", b);
      for (int a = 0; a < dim_; ++a) {
        if (a == na) continue;
        const int m = c->axis_map[a];
        if (back->axis_map[m] != a || back->flip[m] != c->flip[a])
          throw MeshError("connection maps are not inverse of each other", b);
      }
    }
  }
}

void Domain::compute_metrics() {
  metrics_.resize(blocks_.size());
  for (int b = 0; b < num_blocks(); ++b) {
    const auto& blk = blocks_[b];
    auto& m = metrics_[b];
    m.cells.resize(blk.num_cells());
    const auto& r = blk.resolution;
    for (int k = 0; k < r[2]; ++k)
      for (int j = 0; j < r[1]; ++j)
        for (int i = 0; i < r[0]; ++i) {
          const std::array<int, 3> cell{i, j, k};
          Mat3 jac = identity_padded(dim_);
          for (int a = 0; a < dim_; ++a) {
            const auto e = mean_edge(blk, cell, a, {-1, -1, -1});
            for (int c = 0; c < dim_; ++c) jac[c * 3 + a] = e[c];
          }
          const int idx = i + r[0] * (j + r[1] * k);
          try {
            m.cells[idx] = metrics_from_jacobian(jac, dim_);
          } catch (const MeshError& e) {
            throw MeshError(std::string(e.what()) + " in block " + std::to_string(b) + " cell " +
                                std::to_string(idx),
                            b, idx);
          }
        }
    for (int s = 0; s < 2 * dim_; ++s) {
      if (std::holds_alternative<Connection>(blk.boundaries[s])) continue;
      const int na = side_axis(s);
      std::array<int, 2> tang{};
      const int nt = tangential_axes(dim_, s, tang);
      auto& faces = m.boundary[s];
      faces.resize(blk.num_faces(s));
      for (int f = 0; f < blk.num_faces(s); ++f) {
        const auto cref = face_cell(BoundaryFaceRef{b, s, f});
        const auto& cell = cref.index;
        const int cidx = cell[0] + r[0] * (cell[1] + r[1] * cell[2]);
        Mat3 cell_jac = inverse(m.cells[cidx].T, dim_);
        Mat3 jac = identity_padded(dim_);
        for (int c = 0; c < dim_; ++c) jac[c * 3 + na] = cell_jac[c * 3 + na];
        std::array<int, 3> fixed{-1, -1, -1};
        fixed[na] = side_upper(s) ? 1 : 0;
        for (int t = 0; t < nt; ++t) {
          const auto e = mean_edge(blk, cell, tang[t], fixed);
          for (int c = 0; c < dim_; ++c) jac[c * 3 + tang[t]] = e[c];
        }
        faces[f] = metrics_from_jacobian(jac, dim_);
      }
    }
  }
}

int Domain::global_index(const CellRef& c) const {
  const auto& r = blocks_.at(c.block).resolution;
  return cell_offset_[c.block] + c.index[0] + r[0] * (c.index[1] + r[1] * c.index[2]);
}

CellRef Domain::cell_ref(int global) const {
  if (global < 0 || global >= num_cells_) throw std::out_of_range("cell index out of range");
  const auto it = std::upper_bound(cell_offset_.begin(), cell_offset_.end(), global);
  const int b = static_cast<int>(it - cell_offset_.begin()) - 1;
  int local = global - cell_offset_[b];
  const auto& r = blocks_[b].resolution;
  CellRef c{b, {local % r[0], (local / r[0]) % r[1], local / (r[0] * r[1])}};
  return c;
}

int Domain::boundary_face_index(const BoundaryFaceRef& f) const {
  const int off = bface_offset_.at(f.block).at(f.side);
  if (off < 0) throw std::invalid_argument("side is connected, not a boundary");
  return off + f.face;
}

BoundaryFaceRef Domain::boundary_face_ref(int global) const {
  for (int b = 0; b < num_blocks(); ++b)
    for (int s = 0; s < 2 * dim_; ++s) {
      const int off = bface_offset_[b][s];
      if (off >= 0 && global >= off && global < off + blocks_[b].num_faces(s))
        return BoundaryFaceRef{b, s, global - off};
    }
  throw std::out_of_range("boundary face index out of range");
}

CellRef Domain::face_cell(const BoundaryFaceRef& f) const {
  const auto& blk = blocks_.at(f.block);
  std::array<int, 2> tang{};
  const int nt = tangential_axes(dim_, f.side, tang);
  CellRef c{f.block, {0, 0, 0}};
  int rem = f.face;
  for (int t = 0; t < nt; ++t) {
    c.index[tang[t]] = rem % blk.resolution[tang[t]];
    rem /= blk.resolution[tang[t]];
  }
  c.index[side_axis(f.side)] = side_upper(f.side) ? blk.resolution[side_axis(f.side)] - 1 : 0;
  return c;
}

Neighbor Domain::neighbor(const CellRef& c, int side) const {
  const auto& blk = blocks_.at(c.block);
  const int a = side_axis(side);
  CellRef n = c;
  n.index[a] += side_normal(side);
  if (n.index[a] >= 0 && n.index[a] < blk.resolution[a]) return NeighborCell{n, FrameMap{}};

  if (const auto* con = std::get_if<Connection>(&blk.boundaries[side])) {
    const auto& other = blocks_[con->block];
    NeighborCell out;
    out.cell.block = con->block;
    for (int t = 0; t < dim_; ++t) {
      if (t == a) continue;
      const int m = con->axis_map[t];
      out.cell.index[m] = con->flip[t] ? other.resolution[m] - 1 - c.index[t] : c.index[t];
      out.frame.axis[t] = m;
      out.frame.sign[t] = con->flip[t] ? -1 : 1;
    }
    const int nb_axis = side_axis(con->side);
    out.cell.index[nb_axis] = side_upper(con->side) ? other.resolution[nb_axis] - 1 : 0;
    out.frame.axis[a] = nb_axis;
    out.frame.sign[a] = -side_normal(side) * side_normal(con->side);
    return out;
  }

  std::array<int, 2> tang{};
  const int nt = tangential_axes(dim_, side, tang);
  int face = 0, stride = 1;
  for (int t = 0; t < nt; ++t) {
    face += c.index[tang[t]] * stride;
    stride *= blk.resolution[tang[t]];
  }
  return BoundaryFaceRef{c.block, side, face};
}

double Domain::total_volume() const {
  double v = 0;
  for (const auto& m : metrics_)
    for (const auto& c : m.cells) v += c.J;
  return v;
}

double Domain::max_skew() const {
  double skew = 0;
  const auto update = [&](const FaceMetrics& f) {
    for (int j = 0; j < dim_; ++j)
      for (int k = j + 1; k < dim_; ++k) {
        const double s =
            std::abs(f.alpha[j * 3 + k]) / std::sqrt(f.alpha[j * 3 + j] * f.alpha[k * 3 + k]);
        skew = std::max(skew, s);
      }
  };
  for (const auto& m : metrics_) {
    for (const auto& c : m.cells) update(c);
    for (const auto& side : m.boundary)
      for (const auto& f : side) update(f);
  }
  return skew;
}

bool Domain::is_orthogonal(double tol) const { return max_skew() <= tol; }

std::vector<std::array<double, 3>> cell_centers(const Domain& domain) {
  std::vector<std::array<double, 3>> out(domain.num_cells(), std::array<double, 3>{0, 0, 0});
  const int dim = domain.dim();
  const int corners = 1 << dim;
  for (int b = 0; b < domain.num_blocks(); ++b) {
    const auto& blk = domain.block(b);
    const auto& r = blk.resolution;
    const int vx = r[0] + 1, vy = r[1] + 1;
    const int nz = dim == 3 ? r[2] : 1;
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < r[1]; ++j)
        for (int i = 0; i < r[0]; ++i) {
          auto& c = out[domain.global_index({b, {i, j, k}})];
          for (int m = 0; m < corners; ++m) {
            const int v = (i + (m & 1)) + vx * ((j + ((m >> 1) & 1)) + vy * (k + ((m >> 2) & 1)));
            for (int a = 0; a < dim; ++a) c[a] += blk.vertices[static_cast<std::size_t>(v) * dim + a] / corners;
          }
        }
  }
  return out;
}

BlockSpec make_block(int dim, const std::array<std::vector<double>, 3>& lines) {
  BlockSpec b;
  b.dim = dim;
  for (int a = 0; a < 3; ++a) {
    if (a < dim) {
      if (lines[a].size() < 2) throw MeshError("coordinate line needs at least two points");
      b.resolution[a] = static_cast<int>(lines[a].size()) - 1;
    } else {
      b.resolution[a] = 1;
    }
  }
  const int nk = dim == 3 ? b.resolution[2] + 1 : 1;
  b.vertices.reserve(b.num_vertices() * dim);
  for (int k = 0; k < nk; ++k)
    for (int j = 0; j <= b.resolution[1]; ++j)
      for (int i = 0; i <= b.resolution[0]; ++i) {
        b.vertices.push_back(lines[0][i]);
        b.vertices.push_back(lines[1][j]);
        if (dim == 3) b.vertices.push_back(lines[2][k]);
      }
  return b;
}

std::vector<double> uniform_coords(int n, double lo, double hi) {
  if (n < 1) throw MeshError("need at least one cell");
  std::vector<double> x(n + 1);
  for (int i = 0; i <= n; ++i) x[i] = lo + (hi - lo) * i / n;
  x[n] = hi;
  return x;
}

std::vector<double> refined_coords_one(int n, double lo, double hi, double base) {
  if (n < 1) throw MeshError("need at least one cell");
  if (!(base > 0)) throw MeshError("refinement base must be positive");
  if (std::abs(base - 1.0) < 1e-14) return uniform_coords(n, lo, hi);
  const double first = (hi - lo) * (base - 1.0) / (std::pow(base, n) - 1.0);
  std::vector<double> x(n + 1);
  x[0] = lo;
  double dx = first;
  for (int i = 1; i <= n; ++i) {
    x[i] = x[i - 1] + dx;
    dx *= base;
  }
  x[n] = hi;
  return x;
}

std::vector<double> refined_coords_both(int n, double lo, double hi, double base) {
  if (n % 2 != 0) throw MeshError("two-sided refinement needs an even cell count");
  const double mid = 0.5 * (lo + hi);
  const auto lower = refined_coords_one(n / 2, lo, mid, base);
  std::vector<double> x(lower);
  for (int i = n / 2 - 1; i >= 0; --i) x.push_back(lo + hi - lower[i]);
  x[n / 2] = mid;
  return x;
}

void apply_rotational_distortion(BlockSpec& block, double angle) {
  if (angle == 0.0) return;
  const int dim = block.dim;
  const auto& r = block.resolution;
  std::array<double, 3> lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  const int nv = block.num_vertices();
  for (int v = 0; v < nv; ++v)
    for (int c = 0; c < dim; ++c) {
      lo[c] = std::min(lo[c], block.vertices[v * dim + c]);
      hi[c] = std::max(hi[c], block.vertices[v * dim + c]);
    }
  const double cx = 0.5 * (lo[0] + hi[0]), cy = 0.5 * (lo[1] + hi[1]);
  const int nk = dim == 3 ? r[2] + 1 : 1;
  for (int k = 0; k < nk; ++k)
    for (int j = 0; j <= r[1]; ++j)
      for (int i = 0; i <= r[0]; ++i) {
        const double sx = static_cast<double>(i) / r[0], sy = static_cast<double>(j) / r[1];
        const double th = angle * std::sin(std::numbers::pi * sx) * std::sin(std::numbers::pi * sy);
        const int idx = vertex_index(block, i, j, k) * dim;
        const double x = block.vertices[idx] - cx, y = block.vertices[idx + 1] - cy;
        block.vertices[idx] = cx + std::cos(th) * x - std::sin(th) * y;
        block.vertices[idx + 1] = cy + std::sin(th) * x + std::cos(th) * y;
      }
}

void set_periodic(BlockSpec& block, int block_index, int axis) {
  block.boundaries[side_index(axis, false)] = Connection{block_index, side_index(axis, true)};
  block.boundaries[side_index(axis, true)] = Connection{block_index, side_index(axis, false)};
}

void connect_blocks(std::vector<BlockSpec>& blocks, int a, int side_a, int b, int side_b) {
  if (side_axis(side_a) != side_axis(side_b))
    throw MeshError("connect_blocks joins sides along the same axis only");
  blocks.at(a).boundaries[side_a] = Connection{b, side_b};
  blocks.at(b).boundaries[side_b] = Connection{a, side_a};
}

void set_dirichlet(BlockSpec& block, int side, const std::array<double, 3>& velocity) {
  Dirichlet d;
  const int nf = block.num_faces(side);
  d.velocity.resize(static_cast<std::size_t>(nf) * block.dim);
  for (int f = 0; f < nf; ++f)
    for (int c = 0; c < block.dim; ++c) d.velocity[f * block.dim + c] = velocity[c];
  block.boundaries[side] = std::move(d);
}

}  // namespace pisoflow
