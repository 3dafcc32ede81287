#pragma once

#include <Eigen/Dense>

namespace curveclust {

inline constexpr double kPivotTolerance = 1e-10;

// Outer-product Cholesky with symmetric diagonal pivoting on the unit-diagonal
// scaling of A:
//   P^T D A D P = L L^T,  D = diag(A)^{-1/2},  L is n x rank (lower trapezoidal
//   in pivot order).
// Elimination stops once the largest remaining pivot falls below
// rel_tol * (largest initial diagonal entry of D A D).
class PivotedCholesky {
 public:
  PivotedCholesky() = default;
  explicit PivotedCholesky(const Eigen::MatrixXd& a, double rel_tol = kPivotTolerance);

  Eigen::Index rank() const { return rank_; }
  Eigen::Index size() const { return perm_.size(); }
  // perm()[k] is the original index eliminated at step k.
  const Eigen::VectorXi& perm() const { return perm_; }
  const Eigen::MatrixXd& factor() const { return l_; }  // of D A D
  const Eigen::VectorXd& scaling() const { return scale_; }
  bool pivot_dropped(Eigen::Index original_index) const;

  // Solution with the dropped coordinates set to zero; exact when b lies in
  // the range of A.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;
  // The generalized inverse implied by solve().
  Eigen::MatrixXd generalized_inverse() const;
  // tr(A^- G) for symmetric G using the generalized inverse above.
  double trace_product(const Eigen::MatrixXd& g) const;
  // x^T A^- x.
  double inverse_quadratic(const Eigen::VectorXd& x) const;
  // Factor in original coordinates: A ~= F F^T with F = P L.
  Eigen::MatrixXd unpermuted_factor() const;

 private:
  Eigen::MatrixXd l_;
  Eigen::VectorXd scale_;
  Eigen::VectorXi perm_;
  Eigen::Index rank_ = 0;
};

// Moore-Penrose inverse of a symmetric matrix via a full-rank Cholesky factor
// (C = F F^T => C^+ = F (F^T F)^{-2} F^T). Indefinite input goes through the
// Gram route C^+ = (C^T C)^+ C^T.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& c, double tol = kPivotTolerance);

// Largest entrywise residual of the four Penrose conditions: C C+ C = C and
// C+ C C+ = C+ relative to max|C| and max|C+|, symmetry of C C+ and C+ C absolute.
double penrose_residual(const Eigen::MatrixXd& c, const Eigen::MatrixXd& c_plus);

}  // namespace curveclust
