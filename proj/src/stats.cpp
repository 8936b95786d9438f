#include "pisoflow/stats.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>

namespace pisoflow {

namespace {

double binomial(int n, int k) {
  double r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

void enumerate(int nvar, int order, std::vector<int>& cur, int v, int used, std::vector<std::vector<int>>& out) {
  if (v == nvar) {
    if (used >= 2) out.push_back(cur);
    return;
  }
  for (int e = 0; used + e <= order; ++e) {
    cur[v] = e;
    enumerate(nvar, order, cur, v + 1, used + e, out);
  }
  cur[v] = 0;
}

int total(const std::vector<int>& e) { return std::accumulate(e.begin(), e.end(), 0); }

}  // namespace

MomentAccumulator::MomentAccumulator(int variables, int max_order) : nvar_(variables), order_(max_order) {
  if (variables < 1) throw std::invalid_argument("accumulator needs at least one variable");
  if (max_order < 2) throw std::invalid_argument("accumulator order must be at least 2");
  mean_.assign(nvar_, 0.0);
  std::vector<int> cur(nvar_, 0);
  enumerate(nvar_, order_, cur, 0, 0, exponents_);
  for (std::size_t i = 0; i < exponents_.size(); ++i) lookup_[exponents_[i]] = static_cast<int>(i);
  sums_.assign(exponents_.size(), 0.0);

  // Pairwise combination: M_a = sum_{b <= a} C(a,b) [M_A,b dA^(a-b) + M_B,b dB^(a-b)],
  // with M_0 the count and first-order central sums zero.
  terms_.resize(exponents_.size());
  for (std::size_t i = 0; i < exponents_.size(); ++i) {
    const auto& alpha = exponents_[i];
    std::vector<int> beta(nvar_, 0);
    while (true) {
      const int tb = total(beta);
      if (tb != 1) {
        Term t;
        t.beta = tb == 0 ? -1 : lookup_.at(beta);
        t.gamma.resize(nvar_);
        for (int v = 0; v < nvar_; ++v) {
          t.gamma[v] = alpha[v] - beta[v];
          t.coefficient *= binomial(alpha[v], beta[v]);
        }
        terms_[i].push_back(std::move(t));
      }
      int v = 0;
      while (v < nvar_ && beta[v] == alpha[v]) beta[v++] = 0;
      if (v == nvar_) break;
      ++beta[v];
    }
  }
}

int MomentAccumulator::index_of(std::span<const int> e) const {
  if (static_cast<int>(e.size()) != nvar_) throw std::invalid_argument("exponent count does not match the variables");
  const std::vector<int> key(e.begin(), e.end());
  const int t = total(key);
  if (t < 2 || t > order_) throw std::invalid_argument("moment order outside the accumulated range");
  return lookup_.at(key);
}

void MomentAccumulator::combine(std::int64_t nb, std::span<const double> mean_b, std::span<const double> sums_b) {
  if (nb == 0) return;
  if (n_ == 0) {
    n_ = nb;
    std::copy(mean_b.begin(), mean_b.end(), mean_.begin());
    if (sums_b.empty())
      std::fill(sums_.begin(), sums_.end(), 0.0);
    else
      std::copy(sums_b.begin(), sums_b.end(), sums_.begin());
    return;
  }
  const double na = static_cast<double>(n_), nbd = static_cast<double>(nb), n = na + nbd;
  std::vector<double> pa(static_cast<std::size_t>(nvar_) * (order_ + 1)), pb(pa.size());
  for (int v = 0; v < nvar_; ++v) {
    const double delta = mean_b[v] - mean_[v];
    const double da = -nbd / n * delta, db = na / n * delta;
    pa[v * (order_ + 1)] = pb[v * (order_ + 1)] = 1;
    for (int k = 1; k <= order_; ++k) {
      pa[v * (order_ + 1) + k] = pa[v * (order_ + 1) + k - 1] * da;
      pb[v * (order_ + 1) + k] = pb[v * (order_ + 1) + k - 1] * db;
    }
  }
  std::vector<double> out(sums_.size(), 0.0);
  for (std::size_t i = 0; i < sums_.size(); ++i) {
    double s = 0;
    for (const auto& t : terms_[i]) {
      double fa = 1, fb = 1;
      for (int v = 0; v < nvar_; ++v) {
        fa *= pa[v * (order_ + 1) + t.gamma[v]];
        fb *= pb[v * (order_ + 1) + t.gamma[v]];
      }
      const double ma = t.beta < 0 ? na : sums_[t.beta];
      const double mb = t.beta < 0 ? nbd : (sums_b.empty() ? 0.0 : sums_b[t.beta]);
      s += t.coefficient * (ma * fa + mb * fb);
    }
    out[i] = s;
  }
  sums_ = std::move(out);
  for (int v = 0; v < nvar_; ++v) mean_[v] += nbd / n * (mean_b[v] - mean_[v]);
  n_ += nb;
}

void MomentAccumulator::add(std::span<const double> sample) {
  if (static_cast<int>(sample.size()) != nvar_) throw std::invalid_argument("sample size does not match the accumulator");
  combine(1, sample, {});
}

void MomentAccumulator::add_batch(std::span<const double> samples) {
  if (samples.size() % nvar_ != 0) throw std::invalid_argument("batch size is not a multiple of the variable count");
  const std::size_t m = samples.size() / nvar_;
  if (m == 0) return;
  std::vector<double> mean(nvar_, 0.0);
  for (std::size_t s = 0; s < m; ++s)
    for (int v = 0; v < nvar_; ++v) mean[v] += samples[s * nvar_ + v];
  for (auto& x : mean) x /= static_cast<double>(m);
  std::vector<double> sums(exponents_.size(), 0.0), dev(nvar_);
  for (std::size_t s = 0; s < m; ++s) {
    for (int v = 0; v < nvar_; ++v) dev[v] = samples[s * nvar_ + v] - mean[v];
    for (std::size_t i = 0; i < exponents_.size(); ++i) {
      double p = 1;
      for (int v = 0; v < nvar_; ++v)
        for (int k = 0; k < exponents_[i][v]; ++k) p *= dev[v];
      sums[i] += p;
    }
  }
  combine(static_cast<std::int64_t>(m), mean, sums);
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  if (other.nvar_ != nvar_ || other.order_ != order_)
    throw std::invalid_argument("cannot merge accumulators of different configuration");
  combine(other.n_, other.mean_, other.sums_);
}

double MomentAccumulator::central_moment(std::span<const int> exponents) const {
  const int i = index_of(exponents);
  if (n_ < 2) throw StatsError("central moments are undefined for fewer than two samples");
  return sums_[i] / static_cast<double>(n_);
}

double MomentAccumulator::covariance(int a, int b) const {
  std::vector<int> e(nvar_, 0);
  ++e.at(a);
  ++e.at(b);
  return central_moment(e);
}

double MomentAccumulator::skewness(int a) const {
  std::vector<int> e(nvar_, 0);
  e.at(a) = 3;
  const double var = variance(a);
  if (var <= 0) return std::numeric_limits<double>::quiet_NaN();
  return central_moment(e) / std::pow(var, 1.5);
}

double MomentAccumulator::flatness(int a) const {
  std::vector<int> e(nvar_, 0);
  e.at(a) = 4;
  const double var = variance(a);
  if (var <= 0) return std::numeric_limits<double>::quiet_NaN();
  return central_moment(e) / (var * var);
}

SliceMap channel_slices(const Domain& domain) {
  if (domain.num_blocks() != 1) throw StatsError("channel statistics need a single-block channel");
  const auto& b = domain.block(0);
  const int dim = b.dim;
  const auto periodic = [&](int axis) {
    const auto* c = std::get_if<Connection>(&b.boundaries[side_index(axis, false)]);
    return c && c->block == 0 && c->side == side_index(axis, true);
  };
  if (!periodic(0) || (dim == 3 && !periodic(2)))
    throw StatsError("channel statistics need periodic streamwise and spanwise directions");
  for (int s : {2, 3})
    if (!std::holds_alternative<Dirichlet>(b.boundaries[s])) throw StatsError("channel statistics need walls in y");

  const auto& r = b.resolution;
  const int nz = dim == 3 ? r[2] : 1;
  const int vx = r[0] + 1, vy = r[1] + 1;
  const auto vy_at = [&](int i, int j, int k) {
    return b.vertices[static_cast<std::size_t>(i + vx * (j + vy * k)) * dim + 1];
  };
  const auto centers = cell_centers(domain);
  SliceMap m;
  m.dim = dim;
  m.cells.resize(r[1]);
  m.y.assign(r[1], 0.0);
  m.dy.assign(r[1], 0.0);
  const int nvz = dim == 3 ? r[2] + 1 : 1;
  double lo = 0, hi = 0;
  for (int k = 0; k < nvz; ++k)
    for (int i = 0; i < vx; ++i) {
      lo += vy_at(i, 0, k);
      hi += vy_at(i, r[1], k);
    }
  m.y_lower = lo / (vx * nvz);
  m.y_upper = hi / (vx * nvz);
  for (int j = 0; j < r[1]; ++j) {
    double dy = 0;
    for (int k = 0; k < nvz; ++k)
      for (int i = 0; i < vx; ++i) dy += vy_at(i, j + 1, k) - vy_at(i, j, k);
    m.dy[j] = dy / (vx * nvz);
    for (int k = 0; k < nz; ++k)
      for (int i = 0; i < r[0]; ++i) {
        const int c = domain.global_index({0, {i, j, k}});
        m.cells[j].push_back(c);
        m.y[j] += centers[c][1];
      }
    m.y[j] /= static_cast<double>(m.cells[j].size());
  }
  return m;
}

SliceMoments SliceMoments::zeros(int dim, int slices) {
  SliceMoments m;
  m.dim = dim;
  m.slices = slices;
  m.mean.assign(static_cast<std::size_t>(dim) * slices, 0.0);
  m.cov.assign(static_cast<std::size_t>(dim) * dim * slices, 0.0);
  return m;
}

namespace {

int num_cells(const SliceMap& s) {
  int n = 0;
  for (const auto& c : s.cells) n += static_cast<int>(c.size());
  return n;
}

void check_field(const SliceMap& s, std::span<const double> u) {
  if (u.size() != static_cast<std::size_t>(s.dim) * num_cells(s))
    throw std::invalid_argument("velocity field does not match the slice map");
}

}  // namespace

SliceMoments slice_moments(const SliceMap& slices, std::span<const double> u) {
  check_field(slices, u);
  const int d = slices.dim, Y = slices.size(), n = num_cells(slices);
  auto m = SliceMoments::zeros(d, Y);
  for (int y = 0; y < Y; ++y) {
    const auto& cells = slices.cells[y];
    const double inv = 1.0 / static_cast<double>(cells.size());
    for (int c = 0; c < d; ++c) {
      double s = 0;
      for (int i : cells) s += u[static_cast<std::size_t>(c) * n + i];
      m.mean[c * Y + y] = s * inv;
    }
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        double s = 0;
        for (int i : cells)
          s += (u[static_cast<std::size_t>(a) * n + i] - m.mean[a * Y + y]) *
               (u[static_cast<std::size_t>(b) * n + i] - m.mean[b * Y + y]);
        m.cov[(a * d + b) * Y + y] = s * inv;
      }
  }
  return m;
}

void slice_moments_backward(const SliceMap& slices, std::span<const double> u, const SliceMoments& grad,
                            std::span<double> du) {
  check_field(slices, u);
  if (du.size() != u.size()) throw std::invalid_argument("cotangent does not match the velocity field");
  const int d = slices.dim, Y = slices.size(), n = num_cells(slices);
  if (grad.dim != d || grad.slices != Y) throw std::invalid_argument("moment cotangent does not match the slice map");
  const auto m = slice_moments(slices, u);
  for (int y = 0; y < Y; ++y) {
    const auto& cells = slices.cells[y];
    const double inv = 1.0 / static_cast<double>(cells.size());
    for (int c = 0; c < d; ++c)
      for (int i : cells) du[static_cast<std::size_t>(c) * n + i] += grad.mean[c * Y + y] * inv;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        const double g = grad.cov[(a * d + b) * Y + y] * inv;
        if (g == 0) continue;
        for (int i : cells) {
          du[static_cast<std::size_t>(a) * n + i] += g * (u[static_cast<std::size_t>(b) * n + i] - m.mean[b * Y + y]);
          du[static_cast<std::size_t>(b) * n + i] += g * (u[static_cast<std::size_t>(a) * n + i] - m.mean[a * Y + y]);
        }
      }
  }
}

SliceMoments window_moments(std::span<const SliceMoments> frames) {
  if (frames.empty()) throw StatsError("window contains no frames");
  const int d = frames[0].dim, Y = frames[0].slices;
  for (const auto& f : frames)
    if (f.dim != d || f.slices != Y) throw StatsError("frames of a window must share their shape");
  const double inv = 1.0 / static_cast<double>(frames.size());
  auto w = SliceMoments::zeros(d, Y);
  for (const auto& f : frames)
    for (std::size_t i = 0; i < w.mean.size(); ++i) w.mean[i] += f.mean[i] * inv;
  for (const auto& f : frames)
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        for (int y = 0; y < Y; ++y)
          w.cov[(a * d + b) * Y + y] +=
              inv * (f.cov[(a * d + b) * Y + y] + (f.mean[a * Y + y] - w.mean[a * Y + y]) * (f.mean[b * Y + y] - w.mean[b * Y + y]));
  return w;
}

namespace {

// Derivative at a wall of a quadratic through the wall value and two samples
// at distances d1 < d2 along the inward normal.
double wall_derivative(double d1, double f1, double d2, double f2) {
  if (d2 <= d1) return f1 / d1;
  return (f1 * d2 * d2 - f2 * d1 * d1) / (d1 * d2 * (d2 - d1));
}

}  // namespace

FrictionVelocity friction_velocity(const SliceMap& s, std::span<const double> mean_u, double nu, double delta,
                                   double wall_velocity_lower, double wall_velocity_upper) {
  const int Y = s.size();
  if (static_cast<int>(mean_u.size()) != Y) throw std::invalid_argument("profile does not match the slices");
  if (!(nu > 0)) throw std::invalid_argument("viscosity must be positive");
  if (Y < 1) throw StatsError("profile is empty");
  double g_lo, g_hi;
  if (Y == 1) {
    g_lo = (mean_u[0] - wall_velocity_lower) / (s.y[0] - s.y_lower);
    g_hi = (mean_u[0] - wall_velocity_upper) / (s.y_upper - s.y[0]);
  } else {
    g_lo = wall_derivative(s.y[0] - s.y_lower, mean_u[0] - wall_velocity_lower, s.y[1] - s.y_lower,
                           mean_u[1] - wall_velocity_lower);
    g_hi = wall_derivative(s.y_upper - s.y[Y - 1], mean_u[Y - 1] - wall_velocity_upper, s.y_upper - s.y[Y - 2],
                           mean_u[Y - 2] - wall_velocity_upper);
  }
  FrictionVelocity f;
  f.wall_gradient = 0.5 * (std::abs(g_lo) + std::abs(g_hi));
  f.u_tau = std::sqrt(nu * f.wall_gradient);
  f.re_tau = f.u_tau * delta / nu;
  return f;
}

ChannelStatistics::ChannelStatistics(SliceMap slices, int max_order) : slices_(std::move(slices)) {
  acc_.assign(slices_.size(), MomentAccumulator(slices_.dim, max_order));
}

void ChannelStatistics::add_frame(std::span<const double> u) {
  check_field(slices_, u);
  const int d = slices_.dim, n = num_cells(slices_);
  std::vector<double> batch;
  for (int y = 0; y < slices_.size(); ++y) {
    const auto& cells = slices_.cells[y];
    batch.resize(cells.size() * d);
    for (std::size_t k = 0; k < cells.size(); ++k)
      for (int c = 0; c < d; ++c) batch[k * d + c] = u[static_cast<std::size_t>(c) * n + cells[k]];
    acc_[y].add_batch(batch);
  }
  ++frames_;
}

void ChannelStatistics::merge(const ChannelStatistics& other) {
  if (other.acc_.size() != acc_.size() || other.slices_.dim != slices_.dim)
    throw std::invalid_argument("cannot merge statistics of different channels");
  for (std::size_t y = 0; y < acc_.size(); ++y) acc_[y].merge(other.acc_[y]);
  frames_ += other.frames_;
}

StatsProfile ChannelStatistics::profile(double nu, double delta) const {
  if (frames_ == 0) throw StatsError("no frames accumulated");
  const int d = slices_.dim, Y = slices_.size(), order = acc_.front().max_order();
  StatsProfile p;
  p.dim = d;
  p.nu = nu;
  p.delta = delta;
  p.frames = frames_;
  p.y = slices_.y;
  p.mean.assign(static_cast<std::size_t>(d) * Y, 0.0);
  p.cov.assign(static_cast<std::size_t>(d) * d * Y, 0.0);
  if (order >= 3) p.skewness.assign(static_cast<std::size_t>(d) * Y, 0.0);
  if (order >= 4) p.flatness.assign(static_cast<std::size_t>(d) * Y, 0.0);
  for (int y = 0; y < Y; ++y) {
    const auto& a = acc_[y];
    for (int c = 0; c < d; ++c) {
      p.mean[c * Y + y] = a.mean()[c];
      if (order >= 3) p.skewness[c * Y + y] = a.skewness(c);
      if (order >= 4) p.flatness[c * Y + y] = a.flatness(c);
      for (int b = 0; b < d; ++b) p.cov[(c * d + b) * Y + y] = a.covariance(c, b);
    }
  }
  p.friction = friction_velocity(slices_, std::span<const double>(p.mean.data(), Y), nu, delta);
  p.y_plus.resize(Y);
  for (int y = 0; y < Y; ++y)
    p.y_plus[y] = std::min(p.y[y] - slices_.y_lower, slices_.y_upper - p.y[y]) * p.friction.u_tau / nu;
  return p;
}

void physical_gradient(const Grid<double>& g, std::span<const double> q, std::span<double> out) {
  const int n = g.nc(), d = g.dim;
  if (q.size() != static_cast<std::size_t>(n) || out.size() != static_cast<std::size_t>(d) * n)
    throw std::invalid_argument("gradient field sizes do not match the grid");
  std::fill(out.begin(), out.end(), 0.0);
  for (int c = 0; c < n; ++c)
    for (int j = 0; j < d; ++j) {
      const double dxi = g.gradient[c][j].apply(q);
      for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(i) * n + c] += g.t(c, j, i) * dxi;
    }
}

namespace {

// Helper bundling the slice/cell maps used by the budget evaluation.
struct SliceOps {
  const Grid<double>& g;
  const SliceMap& s;
  std::vector<int> slice_of;

  SliceOps(const Grid<double>& grid, const SliceMap& slices) : g(grid), s(slices), slice_of(grid.nc(), -1) {
    for (int y = 0; y < s.size(); ++y)
      for (int c : s.cells[y]) slice_of.at(c) = y;
    for (int v : slice_of)
      if (v < 0) throw StatsError("slice map does not cover the grid");
  }
  std::vector<double> broadcast(std::span<const double> profile) const {
    std::vector<double> f(g.nc());
    for (int c = 0; c < g.nc(); ++c) f[c] = profile[slice_of[c]];
    return f;
  }
  std::vector<double> average(std::span<const double> field) const {
    std::vector<double> p(s.size(), 0.0);
    for (int y = 0; y < s.size(); ++y) {
      for (int c : s.cells[y]) p[y] += field[c];
      p[y] /= static_cast<double>(s.cells[y].size());
    }
    return p;
  }
  std::vector<double> gradient(std::span<const double> field) const {
    std::vector<double> out(static_cast<std::size_t>(g.dim) * g.nc());
    physical_gradient(g, field, out);
    return out;
  }
  std::span<const double> comp(const std::vector<double>& v, int k) const {
    return std::span<const double>(v).subspan(static_cast<std::size_t>(k) * g.nc(), g.nc());
  }
  // Slice average of d(profile)/dx_k.
  std::vector<double> derivative(std::span<const double> profile, int k) const {
    const auto gr = gradient(broadcast(profile));
    return average(comp(gr, k));
  }
  std::vector<double> second_derivative(std::span<const double> profile, int k) const {
    const auto gr = gradient(broadcast(profile));
    const std::vector<double> first(comp(gr, k).begin(), comp(gr, k).end());
    const auto gr2 = gradient(first);
    return average(comp(gr2, k));
  }
};

}  // namespace

BudgetProfile budget_terms(const Grid<double>& g, const SliceMap& slices,
                           std::span<const std::vector<double>> velocity_frames,
                           std::span<const std::vector<double>> pressure_frames) {
  if (velocity_frames.empty()) throw StatsError("budget terms need at least one frame");
  if (pressure_frames.size() != velocity_frames.size()) throw std::invalid_argument("velocity and pressure frame counts differ");
  if (slices.dim != g.dim) throw std::invalid_argument("slice map does not match the grid");
  const SliceOps ops(g, slices);
  const int d = g.dim, n = g.nc(), Y = slices.size();
  const double inv_frames = 1.0 / static_cast<double>(velocity_frames.size());
  for (const auto& u : velocity_frames) check_field(slices, u);
  for (const auto& p : pressure_frames)
    if (p.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("pressure frame does not match the grid");

  // Mean velocity over time and homogeneous directions.
  std::vector<std::vector<double>> mean(d, std::vector<double>(Y, 0.0));
  for (const auto& u : velocity_frames)
    for (int c = 0; c < d; ++c) {
      const auto a = ops.average(std::span<const double>(u).subspan(static_cast<std::size_t>(c) * n, n));
      for (int y = 0; y < Y; ++y) mean[c][y] += a[y] * inv_frames;
    }
  std::vector<std::vector<double>> mean_field(d);
  for (int c = 0; c < d; ++c) mean_field[c] = ops.broadcast(mean[c]);

  BudgetProfile out;
  out.dim = d;
  out.y = slices.y;
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) out.pairs.push_back({a, b});
  const int np = static_cast<int>(out.pairs.size());

  // Fluctuation moments, per cell then slice-averaged.
  std::vector<double> R(static_cast<std::size_t>(d) * d * n, 0.0);       // <u'_a u'_b>
  std::vector<double> R3(static_cast<std::size_t>(d) * d * d * n, 0.0);  // <u'_a u'_b u'_k>
  std::vector<double> eps(static_cast<std::size_t>(np) * n, 0.0), pig(static_cast<std::size_t>(np) * n, 0.0);
  std::vector<double> fl(static_cast<std::size_t>(d) * n);
  for (std::size_t f = 0; f < velocity_frames.size(); ++f) {
    const auto& u = velocity_frames[f];
    for (int c = 0; c < d; ++c)
      for (int i = 0; i < n; ++i) fl[static_cast<std::size_t>(c) * n + i] = u[static_cast<std::size_t>(c) * n + i] - mean_field[c][i];
    std::vector<std::vector<double>> gu(d);
    for (int c = 0; c < d; ++c) gu[c] = ops.gradient(ops.comp(fl, c));
    const auto gp = ops.gradient(pressure_frames[f]);
    for (int i = 0; i < n; ++i) {
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
          const double ab = fl[a * n + i] * fl[b * n + i];
          R[(static_cast<std::size_t>(a) * d + b) * n + i] += ab * inv_frames;
          for (int k = 0; k < d; ++k)
            R3[((static_cast<std::size_t>(a) * d + b) * d + k) * n + i] += ab * fl[k * n + i] * inv_frames;
        }
      for (int q = 0; q < np; ++q) {
        const auto [a, b] = out.pairs[q];
        double e = 0;
        for (int k = 0; k < d; ++k) e += gu[a][k * n + i] * gu[b][k * n + i];
        eps[static_cast<std::size_t>(q) * n + i] += 2 * e * inv_frames;
        pig[static_cast<std::size_t>(q) * n + i] -= (fl[a * n + i] * gp[b * n + i] + fl[b * n + i] * gp[a * n + i]) * inv_frames;
      }
    }
  }
  const auto R_profile = [&](int a, int b) {
    return ops.average(std::span<const double>(R).subspan((static_cast<std::size_t>(a) * d + b) * n, n));
  };
  std::vector<std::vector<std::vector<double>>> dU(d, std::vector<std::vector<double>>(d));
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) dU[j][k] = ops.derivative(mean[j], k);

  const std::size_t sz = static_cast<std::size_t>(np) * Y;
  out.production.assign(sz, 0.0);
  out.dissipation.assign(sz, 0.0);
  out.transport.assign(sz, 0.0);
  out.diffusion.assign(sz, 0.0);
  out.pressure.assign(sz, 0.0);
  for (int q = 0; q < np; ++q) {
    const auto [a, b] = out.pairs[q];
    const auto e = ops.average(std::span<const double>(eps).subspan(static_cast<std::size_t>(q) * n, n));
    const auto pi = ops.average(std::span<const double>(pig).subspan(static_cast<std::size_t>(q) * n, n));
    const auto Rab = R_profile(a, b);
    for (int k = 0; k < d; ++k) {
      const auto Rak = R_profile(a, k), Rbk = R_profile(b, k);
      const auto R3p = ops.average(std::span<const double>(R3).subspan(((static_cast<std::size_t>(a) * d + b) * d + k) * n, n));
      const auto dT = ops.derivative(R3p, k);
      const auto d2 = ops.second_derivative(Rab, k);
      for (int y = 0; y < Y; ++y) {
        out.production[q * Y + y] -= Rak[y] * dU[b][k][y] + Rbk[y] * dU[a][k][y];
        out.transport[q * Y + y] -= dT[y];
        out.diffusion[q * Y + y] += d2[y];
      }
    }
    for (int y = 0; y < Y; ++y) {
      out.dissipation[q * Y + y] = e[y];
      out.pressure[q * Y + y] = pi[y];
    }
  }
  return out;
}

LossWeights LossWeights::channel() {
  LossWeights w;
  w.mean = {1.0, 0.5, 0.5};
  w.cov = {1, 1, 0, 0, 1, 0, 0, 0, 1};
  w.per_frame = 0.5;
  return w;
}

void LossWeights::validate() const {
  const auto bad = [](double v) { return !(v >= 0); };
  if (std::any_of(mean.begin(), mean.end(), bad) || std::any_of(cov.begin(), cov.end(), bad) || bad(per_frame) ||
      bad(source) || bad(divergence) || bad(weight_decay))
    throw std::invalid_argument("loss weights must be non-negative");
}

namespace {

// Weighted profile mismatch of one set of moments and its gradient.
double profile_term(const SliceMoments& m, const SliceMoments& ref, const LossWeights& w, SliceMoments* grad,
                    double scale) {
  const int d = m.dim, Y = m.slices;
  double loss = 0;
  for (int c = 0; c < d; ++c)
    for (int y = 0; y < Y; ++y) {
      const double e = m.mean[c * Y + y] - ref.mean[c * Y + y];
      loss += w.mean[c] * e * e / Y;
      if (grad) grad->mean[c * Y + y] += scale * 2 * w.mean[c] * e / Y;
    }
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      for (int y = 0; y < Y; ++y) {
        const std::size_t k = static_cast<std::size_t>(a * d + b) * Y + y;
        const double e = m.cov[k] - ref.cov[k];
        loss += w.cov[a * 3 + b] * e * e / Y;
        if (grad) grad->cov[k] += scale * 2 * w.cov[a * 3 + b] * e / Y;
      }
  return scale * loss;
}

}  // namespace

double stats_loss(std::span<const SliceMoments> frames, const SliceMoments& reference, const LossWeights& weights,
                  std::vector<SliceMoments>* grad) {
  weights.validate();
  if (frames.empty()) throw StatsError("statistics loss needs at least one frame");
  const int d = reference.dim, Y = reference.slices;
  for (const auto& f : frames)
    if (f.dim != d || f.slices != Y || f.mean.size() != reference.mean.size() || f.cov.size() != reference.cov.size())
      throw StatsError("frame statistics do not match the reference shape");
  const auto window = window_moments(frames);
  auto wgrad = SliceMoments::zeros(d, Y);
  double loss = profile_term(window, reference, weights, grad ? &wgrad : nullptr, 1.0);
  if (grad) grad->assign(frames.size(), SliceMoments::zeros(d, Y));
  for (std::size_t n = 0; n < frames.size(); ++n)
    if (weights.per_frame != 0)
      loss += profile_term(frames[n], reference, weights, grad ? &(*grad)[n] : nullptr, weights.per_frame);
  if (grad) {
    const double inv = 1.0 / static_cast<double>(frames.size());
    for (std::size_t n = 0; n < frames.size(); ++n) {
      auto& g = (*grad)[n];
      const auto& f = frames[n];
      for (std::size_t i = 0; i < g.mean.size(); ++i) g.mean[i] += wgrad.mean[i] * inv;
      for (std::size_t i = 0; i < g.cov.size(); ++i) g.cov[i] += wgrad.cov[i] * inv;
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          for (int y = 0; y < Y; ++y) {
            const double gw = wgrad.cov[(a * d + b) * Y + y] * inv;
            g.mean[a * Y + y] += gw * (f.mean[b * Y + y] - window.mean[b * Y + y]);
            g.mean[b * Y + y] += gw * (f.mean[a * Y + y] - window.mean[a * Y + y]);
          }
    }
  }
  return loss;
}

double aggregate_error(std::span<const std::vector<double>> profiles, std::span<const std::vector<double>> reference,
                       std::span<const double> dy) {
  if (profiles.size() != reference.size()) throw std::invalid_argument("profile and reference counts differ");
  const double total = std::accumulate(dy.begin(), dy.end(), 0.0);
  if (!(total > 0)) throw std::invalid_argument("cell sizes must sum to a positive value");
  double err = 0;
  for (std::size_t l = 0; l < profiles.size(); ++l) {
    const auto& s = profiles[l];
    const auto& r = reference[l];
    if (s.size() != dy.size() || r.size() != dy.size()) throw std::invalid_argument("profile length does not match dy");
    double mx = 0;
    for (double v : r) mx = std::max(mx, std::abs(v));
    if (mx == 0) throw StatsError("reference profile " + std::to_string(l) + " is identically zero");
    double sum = 0;
    for (std::size_t y = 0; y < dy.size(); ++y) sum += (s[y] - r[y]) * (s[y] - r[y]) * dy[y];
    err += sum / (mx * total);
  }
  return err;
}

double aggregate_error(const StatsProfile& result, const StatsProfile& reference, std::span<const double> dy) {
  if (result.dim != reference.dim || result.slices() != reference.slices())
    throw std::invalid_argument("profiles do not share their shape");
  const auto wall_units = [](const StatsProfile& p) {
    const double ut = p.friction.u_tau;
    if (!(ut > 0)) throw StatsError("wall units need a positive friction velocity");
    const int Y = p.slices(), d = p.dim;
    std::vector<std::vector<double>> out;
    const auto cov = [&](int a, int b) {
      std::vector<double> v(Y);
      for (int y = 0; y < Y; ++y) v[y] = p.cov[(a * d + b) * Y + y] / (ut * ut);
      return v;
    };
    std::vector<double> up(Y);
    for (int y = 0; y < Y; ++y) up[y] = p.mean[y] / ut;
    out.push_back(up);
    for (int a = 0; a < d; ++a) out.push_back(cov(a, a));
    out.push_back(cov(0, 1));
    return out;
  };
  const auto s = wall_units(result), r = wall_units(reference);
  return aggregate_error(s, r, dy);
}

std::vector<double> skin_friction(const Domain& domain, std::span<const double> u, std::span<const double> ub,
                                  int block, int side, double nu, double bulk_velocity) {
  const int d = domain.dim(), n = domain.num_cells();
  if (u.size() != static_cast<std::size_t>(d) * n || ub.size() != static_cast<std::size_t>(d) * domain.num_boundary_faces())
    throw std::invalid_argument("fields do not match the domain");
  if (bulk_velocity == 0) throw std::invalid_argument("bulk velocity must be non-zero");
  const auto& blk = domain.block(block);
  if (std::holds_alternative<Connection>(blk.boundaries.at(side))) throw std::invalid_argument("side is not a wall");
  const int axis = side_axis(side), nb = domain.num_boundary_faces();
  const int t0 = axis == 0 ? 1 : 0;
  const int t1 = d == 3 ? 3 - axis - t0 : -1;
  const auto& r = blk.resolution;
  const int vx = r[0] + 1, vy = r[1] + 1;
  const auto vertex = [&](std::array<int, 3> idx) {
    std::array<double, 3> x{0, 0, 0};
    const std::size_t v = static_cast<std::size_t>(idx[0] + vx * (idx[1] + vy * idx[2]));
    for (int a = 0; a < d; ++a) x[a] = blk.vertices[v * d + a];
    return x;
  };
  const auto centers = cell_centers(domain);
  std::vector<double> cf(blk.num_faces(side));
  for (int f = 0; f < static_cast<int>(cf.size()); ++f) {
    const BoundaryFaceRef ref{block, side, f};
    const CellRef owner = domain.face_cell(ref);
    const int P = domain.global_index(owner), bf = domain.boundary_face_index(ref);
    std::array<int, 3> base = owner.index;
    if (side_upper(side)) base[axis] += 1;
    // Face centre and edge directions from the face's corner vertices.
    std::array<double, 3> xf{0, 0, 0}, tan0{0, 0, 0}, tan1{0, 0, 0};
    const int corners = d == 3 ? 4 : 2;
    for (int m = 0; m < corners; ++m) {
      auto idx = base;
      const int s0 = m & 1, s1 = (m >> 1) & 1;
      idx[t0] += s0;
      if (t1 >= 0) idx[t1] += s1;
      const auto x = vertex(idx);
      for (int a = 0; a < 3; ++a) {
        xf[a] += x[a] / corners;
        tan0[a] += (s0 ? 1.0 : -1.0) * x[a] / (corners / 2);
        if (t1 >= 0) tan1[a] += (s1 ? 1.0 : -1.0) * x[a] / 2;
      }
    }
    const auto normalise = [](std::array<double, 3>& v) {
      const double l = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      for (auto& x : v) x /= l;
    };
    normalise(tan0);
    std::array<double, 3> nrm{0, 0, 0};
    if (d == 2) {
      nrm = {-tan0[1], tan0[0], 0};
    } else {
      nrm = {tan0[1] * tan1[2] - tan0[2] * tan1[1], tan0[2] * tan1[0] - tan0[0] * tan1[2],
             tan0[0] * tan1[1] - tan0[1] * tan1[0]};
      normalise(nrm);
    }
    double dist = 0, ut = 0;
    for (int a = 0; a < d; ++a) {
      dist += (centers[P][a] - xf[a]) * nrm[a];
      ut += (u[static_cast<std::size_t>(a) * n + P] - ub[static_cast<std::size_t>(a) * nb + bf]) * tan0[a];
    }
    const double tau = nu * ut / std::abs(dist);
    cf[f] = tau / (0.5 * bulk_velocity * bulk_velocity);
  }
  return cf;
}

std::vector<double> vorticity(const Grid<double>& g, std::span<const double> u) {
  const int n = g.nc(), d = g.dim;
  if (u.size() != static_cast<std::size_t>(d) * n) throw std::invalid_argument("velocity does not match the grid");
  std::vector<std::vector<double>> gr(d, std::vector<double>(static_cast<std::size_t>(d) * n));
  for (int c = 0; c < d; ++c) physical_gradient(g, u.subspan(static_cast<std::size_t>(c) * n, n), gr[c]);
  const auto D = [&](int c, int k, int i) { return gr[c][static_cast<std::size_t>(k) * n + i]; };
  if (d == 2) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = D(1, 0, i) - D(0, 1, i);
    return w;
  }
  std::vector<double> w(3 * static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    w[i] = D(2, 1, i) - D(1, 2, i);
    w[n + i] = D(0, 2, i) - D(2, 0, i);
    w[2 * n + i] = D(1, 0, i) - D(0, 1, i);
  }
  return w;
}

double vorticity_correlation(std::span<const double> w, std::span<const double> w_ref) {
  if (w.size() != w_ref.size()) throw std::invalid_argument("vorticity fields differ in size");
  double num = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    num += w[i] * w_ref[i];
    a += w[i] * w[i];
    b += w_ref[i] * w_ref[i];
  }
  if (a == 0 || b == 0) throw StatsError("correlation of a zero vorticity field is undefined");
  return num / (std::sqrt(a) * std::sqrt(b));
}

std::vector<double> temporal_correlation(std::span<const double> series_a, std::span<const double> series_b,
                                         int points, int max_lag) {
  if (points <= 0 || series_a.size() != series_b.size() || series_a.size() % points != 0)
    throw std::invalid_argument("series do not share a frame layout");
  const int T = static_cast<int>(series_a.size() / points);
  if (max_lag < 0 || max_lag >= T) throw std::invalid_argument("lag exceeds the series length");
  std::vector<double> ma(points, 0.0), mb(points, 0.0);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < points; ++k) {
      ma[k] += series_a[static_cast<std::size_t>(t) * points + k] / T;
      mb[k] += series_b[static_cast<std::size_t>(t) * points + k] / T;
    }
  const auto A = [&](int t, int k) { return series_a[static_cast<std::size_t>(t) * points + k] - ma[k]; };
  const auto B = [&](int t, int k) { return series_b[static_cast<std::size_t>(t) * points + k] - mb[k]; };
  std::vector<double> R(max_lag + 1);
  for (int lag = 0; lag <= max_lag; ++lag) {
    double num = 0, va = 0, vb = 0;
    for (int t = 0; t + lag < T; ++t)
      for (int k = 0; k < points; ++k) {
        num += A(t, k) * B(t + lag, k);
        va += A(t, k) * A(t, k);
        vb += B(t + lag, k) * B(t + lag, k);
      }
    if (va == 0 || vb == 0) throw StatsError("correlation of a constant series is undefined");
    R[lag] = num / (std::sqrt(va) * std::sqrt(vb));
  }
  return R;
}

void CsvTable::write(std::ostream& os) const {
  if (header.size() != columns.size()) throw std::invalid_argument("CSV header and column counts differ");
  for (std::size_t c = 0; c < header.size(); ++c) os << (c ? "," : "") << header[c];
  os << '\n';
  const std::size_t rows = columns.empty() ? 0 : columns.front().size();
  for (const auto& col : columns)
    if (col.size() != rows) throw std::invalid_argument("CSV columns differ in length");
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << columns[c][r];
    os << '\n';
  }
  os.precision(old);
}

namespace {

constexpr char kComp[] = {'u', 'v', 'w'};

std::vector<double> slice_of(const std::vector<double>& v, std::size_t k, int Y) {
  return std::vector<double>(v.begin() + k * Y, v.begin() + (k + 1) * Y);
}

}  // namespace

CsvTable profile_table(const StatsProfile& p) {
  const int Y = p.slices(), d = p.dim;
  CsvTable t;
  t.header = {"y", "y_plus"};
  t.columns = {p.y, p.y_plus};
  for (int c = 0; c < d; ++c) {
    t.header.push_back(std::string("mean_") + kComp[c]);
    t.columns.push_back(slice_of(p.mean, c, Y));
  }
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      t.header.push_back(std::string(1, kComp[a]) + kComp[b]);
      t.columns.push_back(slice_of(p.cov, a * d + b, Y));
    }
  for (int c = 0; c < d && !p.skewness.empty(); ++c) {
    t.header.push_back(std::string("skewness_") + kComp[c]);
    t.columns.push_back(slice_of(p.skewness, c, Y));
  }
  for (int c = 0; c < d && !p.flatness.empty(); ++c) {
    t.header.push_back(std::string("flatness_") + kComp[c]);
    t.columns.push_back(slice_of(p.flatness, c, Y));
  }
  return t;
}

CsvTable budget_table(const BudgetProfile& b) {
  const int Y = static_cast<int>(b.y.size());
  CsvTable t;
  t.header = {"y"};
  t.columns = {b.y};
  for (std::size_t q = 0; q < b.pairs.size(); ++q) {
    const std::string ij = std::string(1, kComp[b.pairs[q][0]]) + kComp[b.pairs[q][1]];
    const std::pair<const char*, const std::vector<double>*> terms[] = {{"production_", &b.production},
                                                                         {"dissipation_", &b.dissipation},
                                                                         {"transport_", &b.transport},
                                                                         {"diffusion_", &b.diffusion},
                                                                         {"pressure_", &b.pressure}};
    for (const auto& [name, v] : terms) {
      t.header.push_back(name + ij);
      t.columns.push_back(slice_of(*v, q, Y));
    }
  }
  return t;
}

CsvTable correlation_table(std::span<const double> values, double lag_step) {
  CsvTable t;
  t.header = {"lag", "value"};
  t.columns.resize(2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    t.columns[0].push_back(static_cast<double>(i) * lag_step);
    t.columns[1].push_back(values[i]);
  }
  return t;
}

}  // namespace pisoflow
