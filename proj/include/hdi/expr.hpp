#pragma once

#include <Eigen/Dense>
#include <memory>
#include <stdexcept>
#include <string>

namespace hdi {

struct ExprError : std::runtime_error {
  int column;  // 1-based offset into the expression text
  ExprError(const std::string& msg, int col)
      : std::runtime_error(msg + " (column " + std::to_string(col) + ")"), column(col) {}
};

/// Arithmetic expression in x, y, z: + - * / ^, unary minus, parentheses,
/// exp/sin/cos/sqrt, the cutoff bump(u) = exp(-1/(1-u)) for u<1 else 0, and
/// the constant pi. Parsed once, evaluated at points.
class Expression {
 public:
  static Expression parse(const std::string& text);

  double eval(const Eigen::Vector3d& x) const;
  const std::string& text() const { return text_; }

  struct Node;

 private:
  std::shared_ptr<const Node> root_;
  std::string text_;
};

}  // namespace hdi
