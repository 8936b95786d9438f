#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pisoflow {

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

class ZeroPivotError : public SolverError {
 public:
  explicit ZeroPivotError(int row)
      : SolverError("ilu0", "zero pivot in row " + std::to_string(row)), row_(row) {}
  int row() const { return row_; }

 private:
  int row_;
};

// Square sparsity pattern with sorted, unique column indices per row.
struct CsrPattern {
  int n = 0;
  std::vector<int> row_ptr;
  std::vector<int> cols;
  std::vector<int> diag;       // entry index of (i, i)
  std::vector<int> transpose;  // entry of (j, i) for entry (i, j); -1 if absent

  int nnz() const { return static_cast<int>(cols.size()); }
  int find(int row, int col) const;  // -1 if absent

  // Builds from per-row column lists (duplicates merged, diagonal always added).
  static std::shared_ptr<const CsrPattern> build(int n, const std::vector<std::vector<int>>& rows);
};

template <class Real>
struct CsrMatrix {
  std::shared_ptr<const CsrPattern> pattern;
  std::vector<Real> values;

  CsrMatrix() = default;
  explicit CsrMatrix(std::shared_ptr<const CsrPattern> p)
      : pattern(std::move(p)), values(pattern->nnz(), Real(0)) {}

  int size() const { return pattern ? pattern->n : 0; }
  void multiply(std::span<const Real> x, std::span<Real> y) const;
  CsrMatrix transposed() const;  // requires a structurally symmetric pattern
};

enum class SolverKind { CG, BiCGStab };
enum class Preconditioner { None, ILU0, Auto };

struct SolverSettings {
  double tolerance = 1e-8;  // relative to ||b||
  int max_iterations = 1000;
  Preconditioner preconditioner = Preconditioner::None;
  // Singular system with a constant null space: project b and x to zero mean.
  bool zero_mean = false;
  // Also stop no later than an absolute residual of tolerance (for large ||b||).
  bool absolute_cap = false;
};

struct SolverReport {
  int iterations = 0;
  double residual = 0;  // true relative residual ||b - Ax|| / ||b||
  bool converged = false;
  bool preconditioned = false;
  // Residual of the unpreconditioned attempt when Auto fell back to ILU(0); -1 otherwise.
  double plain_residual = -1;
};

template <class Real>
class Ilu0 {
 public:
  explicit Ilu0(const CsrMatrix<Real>& a);
  void apply(std::span<const Real> r, std::span<Real> z) const;
  // Combined factors on the input pattern: strict lower part is L (unit diagonal), the rest U.
  const std::vector<Real>& factors() const { return lu_; }
  const CsrPattern& pattern() const { return *pattern_; }

 private:
  std::shared_ptr<const CsrPattern> pattern_;
  std::vector<Real> lu_;
};

template <class Real>
SolverReport cg_solve(const CsrMatrix<Real>& a, std::span<const Real> b, std::span<Real> x,
                      const SolverSettings& s);

template <class Real>
SolverReport bicgstab_solve(const CsrMatrix<Real>& a, std::span<const Real> b, std::span<Real> x,
                            const SolverSettings& s);

// Dispatches on kind; Preconditioner::Auto tries unpreconditioned BiCGStab and
// retries with ILU(0) from the same initial guess if that does not converge.
template <class Real>
SolverReport linear_solve(SolverKind kind, const CsrMatrix<Real>& a, std::span<const Real> b,
                          std::span<Real> x, const SolverSettings& s);

// Solves A^T grad_b = grad_x.
template <class Real>
SolverReport transpose_solve(SolverKind kind, const CsrMatrix<Real>& a, std::span<const Real> grad_x,
                             std::span<Real> grad_b, const SolverSettings& s);

// Accumulates grad_A -= grad_b (x) x restricted to the pattern of A.
template <class Real>
void accumulate_matrix_grad(const CsrPattern& p, std::span<const Real> grad_b, std::span<const Real> x,
                            std::span<Real> grad_values);

template <class Real>
double relative_residual(const CsrMatrix<Real>& a, std::span<const Real> b, std::span<const Real> x);

void project_zero_mean(std::span<double> v);
void project_zero_mean(std::span<float> v);

// Coordinate text dump: header "n nnz nrhs", then "row col value" lines, then
// right-hand sides one value per line.
template <class Real>
void write_coordinate_text(std::ostream& os, const CsrMatrix<Real>& a,
                           const std::vector<std::vector<Real>>& rhs);

}  // namespace pisoflow
