#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace pisoflow {

inline constexpr int kMaxDim = 3;

using Mat3 = std::array<double, 9>;  // row-major 3x3

class MeshError : public std::runtime_error {
 public:
  MeshError(const std::string& what, int block = -1, int cell = -1)
      : std::runtime_error(what), block_(block), cell_(cell) {}
  int block() const { return block_; }
  int cell() const { return cell_; }

 private:
  int block_;
  int cell_;
};

// Sides are numbered 2*axis + upper: -x, +x, -y, +y, -z, +z.
constexpr int side_index(int axis, bool upper) { return 2 * axis + (upper ? 1 : 0); }
constexpr int side_axis(int side) { return side / 2; }
constexpr bool side_upper(int side) { return side % 2 == 1; }
constexpr int side_normal(int side) { return side_upper(side) ? 1 : -1; }
std::string side_name(int side);
int parse_side(const std::string& name);

// Boundary velocities are face-major: velocity[face * dim + component].
// An empty vector means all zeros.
struct Dirichlet {
  std::vector<double> velocity;
};

struct Connection {
  int block = 0;
  int side = 0;
  // For every axis of this block, the matching axis of the target block and
  // whether the index runs in reverse. Entries for the normal axis are ignored.
  std::array<int, 3> axis_map{0, 1, 2};
  std::array<bool, 3> flip{false, false, false};
};

struct AdvectiveOutflow {
  double characteristic_velocity = 1.0;
  std::vector<double> velocity;
};

using BoundarySpec = std::variant<Dirichlet, Connection, AdvectiveOutflow>;

struct BlockSpec {
  int dim = 2;
  std::array<int, 3> resolution{1, 1, 1};
  // Vertex-major, x index fastest; dim components per vertex.
  std::vector<double> vertices;
  std::array<BoundarySpec, 6> boundaries{};
  // Optional per-cell viscosity multiplier (empty means 1 everywhere).
  std::vector<double> viscosity_scale;
  std::string name;

  int num_cells() const;
  int num_vertices() const;
  int num_faces(int side) const;
};

struct CellRef {
  int block = 0;
  std::array<int, 3> index{0, 0, 0};
  bool operator==(const CellRef&) const = default;
};

struct BoundaryFaceRef {
  int block = 0;
  int side = 0;
  int face = 0;
  bool operator==(const BoundaryFaceRef&) const = default;
};

// Frame change from the owner cell to the neighbour: owner axis a corresponds
// to neighbour axis axis[a], with direction sign[a].
struct FrameMap {
  std::array<int, 3> axis{0, 1, 2};
  std::array<int, 3> sign{1, 1, 1};
  bool is_identity() const;
};

struct NeighborCell {
  CellRef cell;
  FrameMap frame;
};

using Neighbor = std::variant<NeighborCell, BoundaryFaceRef>;

struct FaceMetrics {
  Mat3 T{};      // T[j*3+i] = d xi^j / d x_i
  double J = 0;  // det(d x / d xi)
  Mat3 alpha{};  // J * T_j . T_k
};

struct BlockMetrics {
  std::vector<FaceMetrics> cells;
  std::array<std::vector<FaceMetrics>, 6> boundary;
};

class Domain {
 public:
  Domain() = default;
  explicit Domain(std::vector<BlockSpec> blocks);

  int dim() const { return dim_; }
  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  const BlockSpec& block(int b) const { return blocks_.at(b); }
  const std::vector<BlockSpec>& blocks() const { return blocks_; }
  const BlockMetrics& metrics(int b) const { return metrics_.at(b); }

  int num_cells() const { return num_cells_; }
  int cell_offset(int b) const { return cell_offset_.at(b); }
  int global_index(const CellRef& c) const;
  CellRef cell_ref(int global) const;

  // Boundary faces of non-connected sides, numbered globally.
  int num_boundary_faces() const { return num_bfaces_; }
  int boundary_face_index(const BoundaryFaceRef& f) const;
  BoundaryFaceRef boundary_face_ref(int global) const;
  // Owner cell of a boundary face.
  CellRef face_cell(const BoundaryFaceRef& f) const;

  Neighbor neighbor(const CellRef& c, int side) const;

  double total_volume() const;
  double max_skew() const;
  bool is_orthogonal(double tol = 1e-12) const;

 private:
  void validate() const;
  void compute_metrics();

  int dim_ = 2;
  std::vector<BlockSpec> blocks_;
  std::vector<BlockMetrics> metrics_;
  std::vector<int> cell_offset_;
  std::vector<std::array<int, 6>> bface_offset_;  // -1 for connected sides
  int num_cells_ = 0;
  int num_bfaces_ = 0;
};

// Metric helpers, exposed for testing.
double det(const Mat3& m, int dim);
Mat3 inverse(const Mat3& m, int dim);
FaceMetrics metrics_from_jacobian(const Mat3& dx_dxi, int dim);

// Vertex average of every cell, in global cell order.
std::vector<std::array<double, 3>> cell_centers(const Domain& domain);

// Structured block from per-axis coordinate lines (tensor product).
BlockSpec make_block(int dim, const std::array<std::vector<double>, 3>& lines);

std::vector<double> uniform_coords(int n, double lo, double hi);
// Cell sizes grow geometrically by `base` from both ends toward the middle.
std::vector<double> refined_coords_both(int n, double lo, double hi, double base);
// Cell sizes grow geometrically by `base` away from `lo`.
std::vector<double> refined_coords_one(int n, double lo, double hi, double base);

// Rotates every interior vertex around the domain centre by
// angle * sin(pi*s_x) * sin(pi*s_y) where s are the normalised block coordinates.
void apply_rotational_distortion(BlockSpec& block, double angle);

void set_periodic(BlockSpec& block, int block_index, int axis);
void connect_blocks(std::vector<BlockSpec>& blocks, int a, int side_a, int b, int side_b);
void set_dirichlet(BlockSpec& block, int side, const std::array<double, 3>& velocity);

enum class MeshKind { Cavity, Channel, Poiseuille, PeriodicBox, BackwardFacingStep, VortexStreet };

std::string to_string(MeshKind k);
MeshKind parse_mesh_kind(const std::string& s);

struct MeshParams {
  int dim = 2;
  // Cavity/channel/box: cells per axis. Step and vortex street: cells per
  // unit length along x and y (z as given).
  std::array<int, 3> resolution{32, 32, 1};
  std::array<double, 3> size{1.0, 1.0, 1.0};
  double refinement_base = 1.0;  // wall-normal growth factor, 1 = uniform
  double distortion = 0.0;       // rotational distortion angle (Poiseuille)
  double lid_velocity = 1.0;
  int lid_side = 2;  // cavity side that moves along its first tangential axis
  double inflow_velocity = 1.0;
  double step_height = 1.0;
  double inlet_length = 5.0;
  double channel_length = 32.0;
  double buffer_length = 3.0;
  double buffer_viscosity_scale = 1.0;
  double obstacle_width = 1.5;
  double obstacle_x = 3.0;
};

Domain generate_case_mesh(MeshKind kind, const MeshParams& params);

}  // namespace pisoflow
