#include "paflow/common.hpp"

namespace paflow {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t h = splitmix64(base);
  h = splitmix64(h ^ (stream * 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (index + 0x8cb92ba72f3d8dd7ULL));
  return h;
}

Matrix standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(rows, cols);
  // Row-major fill order so that prefixes of the stream map to leading rows.
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = normal(rng);
  }
  return out;
}

Mat3 random_rotation(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
  q.normalize();
  return q.toRotationMatrix();
}

Matrix transform_rows(const Matrix& coords, const Mat3& rotation, const Vec3& translation) {
  require(coords.cols() == 3, "transform_rows: coordinates must have 3 columns");
  Matrix out = coords * rotation.transpose();
  out.rowwise() += translation.transpose();
  return out;
}

void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

}  // namespace paflow
