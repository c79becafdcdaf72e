#include "hdcaps/geometry.hpp"

#include "hdcaps/autodiff.hpp"

#include <stdexcept>
#include <string>

namespace hdcaps {

PointSet::PointSet(Eigen::MatrixXd points) : points_(std::move(points)) {
  if (points_.rows() < 1 || points_.cols() < 1) throw std::invalid_argument("PointSet: need X >= 1 and D >= 1");
  if (!points_.allFinite()) throw std::invalid_argument("PointSet: non-finite coordinates");
}

RotationMatrix RotationMatrix::identity(int dim) {
  if (dim < 1) throw std::invalid_argument("RotationMatrix: dim must be >= 1");
  return RotationMatrix(Eigen::MatrixXd::Identity(dim, dim));
}

RotationMatrix RotationMatrix::from_matrix(Eigen::MatrixXd m, double tol) {
  if (m.rows() < 1 || m.rows() != m.cols()) throw std::invalid_argument("RotationMatrix: matrix must be square");
  const Eigen::Index n = m.rows();
  const double ortho = (m.transpose() * m - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
  const double det = m.determinant();
  if (!(ortho < tol) || !(std::abs(det - 1.0) < tol)) {
    throw std::invalid_argument("RotationMatrix: not special orthogonal (|RtR-I|=" + std::to_string(ortho) +
                                ", det=" + std::to_string(det) + ")");
  }
  return RotationMatrix(std::move(m));
}

RotationMatrix RotationMatrix::operator*(const RotationMatrix& rhs) const {
  if (dim() != rhs.dim()) throw std::invalid_argument("RotationMatrix: dimension mismatch in product");
  return RotationMatrix(m_ * rhs.m_);
}

RotationMatrix sample_rotation(int dim, std::mt19937_64& rng) {
  if (dim < 1) throw std::invalid_argument("sample_rotation: dim must be >= 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(dim, dim);
  for (int c = 0; c < dim; ++c)
    for (int r = 0; r < dim; ++r) g(r, c) = normal(rng);

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::MatrixXd& packed = qr.matrixQR();
  for (int c = 0; c < dim; ++c) {
    if (packed(c, c) < 0.0) q.col(c) = -q.col(c);
  }
  if (q.determinant() < 0.0) q.col(dim - 1) = -q.col(dim - 1);
  return RotationMatrix::from_matrix(std::move(q));
}

PointSet apply_rotation(const RotationMatrix& r, const PointSet& p) {
  if (r.dim() != p.dim()) throw std::invalid_argument("apply_rotation: rotation and point dimensions differ");
  return PointSet(p.points() * r.matrix().transpose());
}

double chamfer(const PointSet& p, const PointSet& q) {
  if (p.count() == 0 || q.count() == 0) throw std::invalid_argument("chamfer: empty point set");
  if (p.dim() != q.dim()) throw std::invalid_argument("chamfer: dimension mismatch");
  ad::Tape<double> tape;
  return ad::chamfer(tape.constant(p.points()), tape.constant(q.points())).scalar();
}

}  // namespace hdcaps
