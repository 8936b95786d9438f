#pragma once

#include <array>
#include <memory>
#include <span>
#include <vector>

#include "pisoflow/linalg.hpp"
#include "pisoflow/mesh.hpp"

namespace pisoflow {

// Up to three weighted cell references; used for derivative stencils.
template <class Real>
struct Stencil {
  std::array<int, 3> cell{};
  std::array<Real, 3> weight{};
  int size = 0;

  Real apply(std::span<const Real> q) const {
    Real s = 0;
    for (int i = 0; i < size; ++i) s += weight[i] * q[cell[i]];
    return s;
  }
  void scatter(Real g, std::span<Real> dq) const {
    for (int i = 0; i < size; ++i) dq[cell[i]] += weight[i] * g;
  }
  void add(int c, Real w) {
    for (int i = 0; i < size; ++i)
      if (cell[i] == c) {
        weight[i] += w;
        return;
      }
    cell[size] = c;
    weight[size++] = w;
  }
};

enum class FaceKind { Dirichlet, Outflow };

// Flattened, precision-specific view of a Domain: global cell numbering,
// neighbour links across connections, metrics and sparsity pattern.
template <class Real>
struct Grid {
  struct Link {
    int cell = -1;   // neighbouring cell, or -1 at a boundary
    int bface = -1;  // boundary face, or -1 across cells
    int entry = -1;  // CSR entry of the neighbour column in this cell's row
    std::array<int, 3> axis{0, 1, 2};
    std::array<int, 3> sign{1, 1, 1};
  };
  struct BoundaryFace {
    int cell = 0;
    int side = 0;
    FaceKind kind = FaceKind::Dirichlet;
    Real outflow_velocity = 0;
    Real J = 0;
    std::array<Real, 9> T{}, M{}, alpha{};
    // Boundary faces adjacent along each owner-frame axis: {lower, upper}.
    std::array<std::array<int, 2>, 3> tangent{};
  };

  int dim = 2;
  int num_cells = 0;
  int num_bfaces = 0;
  std::vector<Real> J;
  std::vector<std::array<Real, 9>> T, M, alpha;
  std::vector<std::array<Link, 6>> links;
  std::vector<std::array<Stencil<Real>, 3>> tangent;   // one-sided at boundaries
  std::vector<std::array<Stencil<Real>, 3>> gradient;  // zero-gradient ghost at boundaries
  std::vector<BoundaryFace> bfaces;
  std::vector<Real> viscosity_scale;
  std::shared_ptr<const CsrPattern> pattern;
  bool orthogonal = true;
  double max_skew = 0;

  int nc() const { return num_cells; }
  Real t(int cell, int j, int i) const { return T[cell][j * 3 + i]; }
  Real m(int cell, int j, int i) const { return M[cell][j * 3 + i]; }
  Real a(int cell, int j, int k) const { return alpha[cell][j * 3 + k]; }
};

template <class Real>
std::shared_ptr<const Grid<Real>> build_grid(const Domain& domain);

// Initial boundary velocities of the domain, component-major like all fields.
template <class Real>
std::vector<Real> initial_boundary_velocity(const Domain& domain);

}  // namespace pisoflow
