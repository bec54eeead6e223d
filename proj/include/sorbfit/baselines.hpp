#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sorbfit/fit_engine.hpp"

namespace sorbfit::baselines {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct LinearModel {
  Vector weights;
  double intercept = 0.0;
  double alpha = 0.0;  // 0 = ordinary least squares

  Vector predict(const Matrix& X) const;
};

/// Minimizes |y - Xw - b|^2 + alpha |w|^2 with the intercept unpenalized.
/// alpha = 0 with rank-deficient X throws SingularSystem.
LinearModel fit_linear(const Matrix& X, const Vector& y, double alpha);

struct TreeNode {
  int feature = -1;  // -1: leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;  // root at 0
  double predict(const double* row, Eigen::Index stride) const;
};

struct ForestModel {
  std::vector<Tree> trees;
  int n_estimators = 0;
  int max_depth = 0;
  std::uint64_t seed = 0;
  Vector importances;  // impurity decrease per feature, normalized to sum 1 when any split exists

  Vector predict(const Matrix& X) const;
};

/// Rows are put in a canonical order before bootstrapping, so the fitted
/// forest does not depend on the input row order.
ForestModel fit_forest(const Matrix& X, const Vector& y, int n_estimators = 100, int max_depth = 5,
                       std::uint64_t seed = 42);

struct ModelSpec {
  enum class Kind { Linear, Forest } kind = Kind::Linear;
  double alpha = 0.0;
  int n_estimators = 50;
  int max_depth = 5;
  std::uint64_t seed = 42;
};

/// Same fold assignment and r2 convention as fit::kfold_cv.
fit::CVStats cross_validate(const ModelSpec& spec, const Matrix& X, const Vector& y, int k = 5,
                            std::uint64_t seed = 42);

nlohmann::json to_json(const LinearModel& m);
LinearModel linear_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ForestModel& m);
ForestModel forest_from_json(const nlohmann::json& j);

}  // namespace sorbfit::baselines
