#include "dklearn/normalize.hpp"

#include <cmath>

#include "dklearn/errors.hpp"

namespace dklearn {

NormMode parse_norm_mode(const std::string& name) {
  if (name == "none") return NormMode::kNone;
  if (name == "standardize") return NormMode::kStandardize;
  if (name == "minmax01") return NormMode::kMinMax01;
  throw ConfigError("unknown normalization mode '" + name + "'");
}

std::string norm_mode_name(NormMode mode) {
  switch (mode) {
    case NormMode::kNone:
      return "none";
    case NormMode::kStandardize:
      return "standardize";
    case NormMode::kMinMax01:
      return "minmax01";
  }
  return "none";
}

Eigen::MatrixXd ColumnTransform::apply(const Eigen::MatrixXd& x) const {
  if (mode == NormMode::kNone) return x;
  if (x.cols() != shift.size())
    throw ShapeError("ColumnTransform: expected " +
                     std::to_string(shift.size()) + " columns, got " +
                     std::to_string(x.cols()));
  Eigen::MatrixXd out = x;
  out.rowwise() -= shift.transpose();
  out.array().rowwise() /= scale.transpose().array();
  return out;
}

Eigen::MatrixXd ColumnTransform::invert(const Eigen::MatrixXd& xt) const {
  if (mode == NormMode::kNone) return xt;
  if (xt.cols() != shift.size())
    throw ShapeError("ColumnTransform: expected " +
                     std::to_string(shift.size()) + " columns, got " +
                     std::to_string(xt.cols()));
  Eigen::MatrixXd out = xt;
  out.array().rowwise() *= scale.transpose().array();
  out.rowwise() += shift.transpose();
  return out;
}

Eigen::VectorXd ScalarTransform::apply(const Eigen::VectorXd& y) const {
  if (mode == NormMode::kNone) return y;
  return (y.array() - shift) / scale;
}

Eigen::VectorXd ScalarTransform::invert(const Eigen::VectorXd& yt) const {
  if (mode == NormMode::kNone) return yt;
  return yt.array() * scale + shift;
}

ColumnTransform fit_column_transform(const Eigen::MatrixXd& x, NormMode mode) {
  if (x.size() == 0) throw ShapeError("fit_column_transform: empty input");
  ColumnTransform tf;
  tf.mode = mode;
  const Eigen::Index d = x.cols();
  tf.shift = Eigen::VectorXd::Zero(d);
  tf.scale = Eigen::VectorXd::Ones(d);
  tf.constant.assign(static_cast<std::size_t>(d), 0);
  if (mode == NormMode::kNone) return tf;
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto col = x.col(j);
    const double lo = col.minCoeff();
    const double hi = col.maxCoeff();
    if (mode == NormMode::kStandardize) {
      const double mean = col.mean();
      const double sd = std::sqrt((col.array() - mean).square().mean());
      // hi == lo catches constant columns whose accumulated sd is not exactly 0.
      if (hi > lo && sd > 0.0) {
        tf.shift(j) = mean;
        tf.scale(j) = sd;
      } else {
        tf.constant[static_cast<std::size_t>(j)] = 1;
      }
    } else {
      if (hi > lo) {
        tf.shift(j) = lo;
        tf.scale(j) = hi - lo;
      } else {
        tf.constant[static_cast<std::size_t>(j)] = 1;
      }
    }
  }
  return tf;
}

ScalarTransform fit_scalar_transform(const Eigen::VectorXd& y, NormMode mode) {
  if (y.size() == 0) throw ShapeError("fit_scalar_transform: empty input");
  ScalarTransform tf;
  tf.mode = mode;
  if (mode == NormMode::kNone) return tf;
  const double lo = y.minCoeff();
  const double hi = y.maxCoeff();
  if (mode == NormMode::kStandardize) {
    const double mean = y.mean();
    const double sd = std::sqrt((y.array() - mean).square().mean());
    if (hi > lo && sd > 0.0) {
      tf.shift = mean;
      tf.scale = sd;
    } else {
      tf.constant = true;
    }
  } else {
    if (hi > lo) {
      tf.shift = lo;
      tf.scale = hi - lo;
    } else {
      tf.constant = true;
    }
  }
  return tf;
}

std::pair<Eigen::MatrixXd, ColumnTransform> standardize(
    const Eigen::MatrixXd& x) {
  auto tf = fit_column_transform(x, NormMode::kStandardize);
  return {tf.apply(x), tf};
}

std::pair<Eigen::MatrixXd, ColumnTransform> normalize01(
    const Eigen::MatrixXd& x) {
  auto tf = fit_column_transform(x, NormMode::kMinMax01);
  return {tf.apply(x), tf};
}

}  // namespace dklearn
