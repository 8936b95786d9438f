#include "pisoflow/grid.hpp"

namespace pisoflow {

namespace {

template <class Real>
std::array<Real, 9> cast9(const Mat3& m) {
  std::array<Real, 9> r{};
  for (int i = 0; i < 9; ++i) r[i] = static_cast<Real>(m[i]);
  return r;
}

template <class Real>
std::array<Real, 9> times_j(const Mat3& t, double j) {
  std::array<Real, 9> r{};
  for (int i = 0; i < 9; ++i) r[i] = static_cast<Real>(j * t[i]);
  return r;
}

}  // namespace

template <class Real>
std::shared_ptr<const Grid<Real>> build_grid(const Domain& domain) {
  auto g = std::make_shared<Grid<Real>>();
  const int dim = domain.dim();
  const int n = domain.num_cells();
  g->dim = dim;
  g->num_cells = n;
  g->num_bfaces = domain.num_boundary_faces();
  g->J.resize(n);
  g->T.resize(n);
  g->M.resize(n);
  g->alpha.resize(n);
  g->links.resize(n);
  g->viscosity_scale.assign(n, Real(1));
  g->max_skew = domain.max_skew();
  g->orthogonal = g->max_skew <= 1e-10;

  std::vector<std::vector<int>> rows(n);
  for (int c = 0; c < n; ++c) {
    const CellRef ref = domain.cell_ref(c);
    const auto& blk = domain.block(ref.block);
    const auto& r = blk.resolution;
    const int local = ref.index[0] + r[0] * (ref.index[1] + r[1] * ref.index[2]);
    const FaceMetrics& fm = domain.metrics(ref.block).cells[local];
    g->J[c] = static_cast<Real>(fm.J);
    g->T[c] = cast9<Real>(fm.T);
    g->M[c] = times_j<Real>(fm.T, fm.J);
    g->alpha[c] = cast9<Real>(fm.alpha);
    if (!blk.viscosity_scale.empty()) g->viscosity_scale[c] = static_cast<Real>(blk.viscosity_scale[local]);
    for (int s = 0; s < 2 * dim; ++s) {
      auto& link = g->links[c][s];
      const Neighbor nb = domain.neighbor(ref, s);
      if (const auto* cell = std::get_if<NeighborCell>(&nb)) {
        link.cell = domain.global_index(cell->cell);
        link.axis = cell->frame.axis;
        link.sign = cell->frame.sign;
        rows[c].push_back(link.cell);
      } else {
        link.bface = domain.boundary_face_index(std::get<BoundaryFaceRef>(nb));
      }
    }
  }
  g->pattern = CsrPattern::build(n, rows);
  for (int c = 0; c < n; ++c)
    for (int s = 0; s < 2 * dim; ++s) {
      auto& link = g->links[c][s];
      if (link.cell >= 0) link.entry = g->pattern->find(c, link.cell);
    }

  g->tangent.resize(n);
  g->gradient.resize(n);
  for (int c = 0; c < n; ++c)
    for (int k = 0; k < dim; ++k) {
      const auto& lo = g->links[c][side_index(k, false)];
      const auto& hi = g->links[c][side_index(k, true)];
      auto& d = g->tangent[c][k];
      if (lo.cell >= 0 && hi.cell >= 0) {
        d.add(hi.cell, Real(0.5));
        d.add(lo.cell, Real(-0.5));
      } else if (hi.cell >= 0) {
        d.add(hi.cell, Real(1));
        d.add(c, Real(-1));
      } else if (lo.cell >= 0) {
        d.add(c, Real(1));
        d.add(lo.cell, Real(-1));
      }
      auto& gr = g->gradient[c][k];
      gr.add(hi.cell >= 0 ? hi.cell : c, Real(0.5));
      gr.add(lo.cell >= 0 ? lo.cell : c, Real(-0.5));
    }

  g->bfaces.resize(g->num_bfaces);
  for (int f = 0; f < g->num_bfaces; ++f) {
    const BoundaryFaceRef ref = domain.boundary_face_ref(f);
    auto& bf = g->bfaces[f];
    bf.cell = domain.global_index(domain.face_cell(ref));
    bf.side = ref.side;
    const auto& spec = domain.block(ref.block).boundaries[ref.side];
    if (const auto* o = std::get_if<AdvectiveOutflow>(&spec)) {
      bf.kind = FaceKind::Outflow;
      bf.outflow_velocity = static_cast<Real>(o->characteristic_velocity);
    }
    const FaceMetrics& fm = domain.metrics(ref.block).boundary[ref.side][ref.face];
    bf.J = static_cast<Real>(fm.J);
    bf.T = cast9<Real>(fm.T);
    bf.M = times_j<Real>(fm.T, fm.J);
    bf.alpha = cast9<Real>(fm.alpha);
    const CellRef owner = domain.face_cell(ref);
    for (int k = 0; k < 3; ++k) bf.tangent[k] = {-1, -1};
    for (int k = 0; k < dim; ++k) {
      if (k == side_axis(ref.side)) continue;
      for (int up = 0; up < 2; ++up) {
        const Neighbor nb = domain.neighbor(owner, side_index(k, up == 1));
        const auto* cell = std::get_if<NeighborCell>(&nb);
        if (!cell) continue;
        const int ax = cell->frame.axis[side_axis(ref.side)];
        const int dir = side_normal(ref.side) * cell->frame.sign[side_axis(ref.side)];
        const Neighbor across = domain.neighbor(cell->cell, side_index(ax, dir > 0));
        if (const auto* face = std::get_if<BoundaryFaceRef>(&across))
          bf.tangent[k][up] = domain.boundary_face_index(*face);
      }
    }
  }
  return g;
}

template <class Real>
std::vector<Real> initial_boundary_velocity(const Domain& domain) {
  const int dim = domain.dim();
  std::vector<Real> ub(static_cast<std::size_t>(domain.num_boundary_faces()) * dim, Real(0));
  for (int f = 0; f < domain.num_boundary_faces(); ++f) {
    const auto ref = domain.boundary_face_ref(f);
    const auto& spec = domain.block(ref.block).boundaries[ref.side];
    const std::vector<double>* v = nullptr;
    if (const auto* d = std::get_if<Dirichlet>(&spec)) v = &d->velocity;
    if (const auto* o = std::get_if<AdvectiveOutflow>(&spec)) v = &o->velocity;
    if (!v || v->empty()) continue;
    for (int c = 0; c < dim; ++c)
      ub[static_cast<std::size_t>(c) * domain.num_boundary_faces() + f] = static_cast<Real>((*v)[ref.face * dim + c]);
  }
  return ub;
}

template std::shared_ptr<const Grid<float>> build_grid<float>(const Domain&);
template std::shared_ptr<const Grid<double>> build_grid<double>(const Domain&);
template std::vector<float> initial_boundary_velocity<float>(const Domain&);
template std::vector<double> initial_boundary_velocity<double>(const Domain&);

}  // namespace pisoflow
