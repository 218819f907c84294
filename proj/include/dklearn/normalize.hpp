#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace dklearn {

enum class NormMode { kNone, kStandardize, kMinMax01 };

NormMode parse_norm_mode(const std::string& name);
std::string norm_mode_name(NormMode mode);

/// Column-wise affine transform for feature matrices: x' = (x - shift)/scale.
/// Constant columns are passed through unchanged and flagged.
struct ColumnTransform {
  NormMode mode = NormMode::kNone;
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;
  std::vector<char> constant;  // per-column flag

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd invert(const Eigen::MatrixXd& xt) const;
  bool identity() const { return mode == NormMode::kNone; }
};

/// Scalar affine transform for target vectors: y' = (y - shift)/scale.
struct ScalarTransform {
  NormMode mode = NormMode::kNone;
  double shift = 0.0;
  double scale = 1.0;
  bool constant = false;  // degenerate spread, transform is a pass-through

  Eigen::VectorXd apply(const Eigen::VectorXd& y) const;
  Eigen::VectorXd invert(const Eigen::VectorXd& yt) const;
  double invert_mean(double m) const { return m * scale + shift; }
  double invert_variance(double v) const { return v * scale * scale; }
};

/// Fits the transform on x and returns it; x must be non-empty.
/// Standardization uses the population standard deviation (1/n).
ColumnTransform fit_column_transform(const Eigen::MatrixXd& x, NormMode mode);
ScalarTransform fit_scalar_transform(const Eigen::VectorXd& y, NormMode mode);

/// One-shot helpers matching the two schemes used throughout.
std::pair<Eigen::MatrixXd, ColumnTransform> standardize(
    const Eigen::MatrixXd& x);
std::pair<Eigen::MatrixXd, ColumnTransform> normalize01(
    const Eigen::MatrixXd& x);

}  // namespace dklearn
