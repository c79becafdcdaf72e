#pragma once

// Rotations on SO(D), rigid rotation of point sets, and the chamfer distance.

#include <Eigen/Dense>

#include <random>

namespace hdcaps {

// X points in D dimensions, one point per row.
class PointSet {
 public:
  PointSet() = default;
  explicit PointSet(Eigen::MatrixXd points);

  Eigen::Index count() const { return points_.rows(); }
  Eigen::Index dim() const { return points_.cols(); }
  const Eigen::MatrixXd& points() const { return points_; }

 private:
  Eigen::MatrixXd points_;
};

// D×D special-orthogonal matrix.
class RotationMatrix {
 public:
  static RotationMatrix identity(int dim);
  // Checks orthogonality and unit determinant to `tol`.
  static RotationMatrix from_matrix(Eigen::MatrixXd m, double tol = 1e-10);

  int dim() const { return static_cast<int>(m_.rows()); }
  const Eigen::MatrixXd& matrix() const { return m_; }

  RotationMatrix operator*(const RotationMatrix& rhs) const;

 private:
  explicit RotationMatrix(Eigen::MatrixXd m) : m_(std::move(m)) {}
  Eigen::MatrixXd m_;
};

// Haar-distributed draw from SO(dim): Gaussian matrix, QR, column signs
// fixed by diag(R), last column negated when det = -1.
RotationMatrix sample_rotation(int dim, std::mt19937_64& rng);

PointSet apply_rotation(const RotationMatrix& r, const PointSet& p);

// (1/|P|) Σ_p min_q ‖p−q‖² + (1/|Q|) Σ_q min_p ‖q−p‖²
double chamfer(const PointSet& p, const PointSet& q);

}  // namespace hdcaps
