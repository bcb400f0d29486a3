#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace paflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Index = Eigen::Index;

/// Violated precondition or shape mismatch at an API boundary.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// NaN / non-finite value produced during a numerical computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. The message names the line and field.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration (unknown key, bad value, missing input).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a base seed, a stream tag and an index.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0);

Matrix standard_normal(Index rows, Index cols, Rng& rng);

/// Uniformly distributed rotation (unit quaternion from four normals).
Mat3 random_rotation(Rng& rng);

/// Applies x -> R x + b to every row of an N x 3 coordinate matrix.
Matrix transform_rows(const Matrix& coords, const Mat3& rotation, const Vec3& translation);

void require(bool condition, const std::string& message);

}  // namespace paflow
