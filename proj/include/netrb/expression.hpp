#pragma once

#include <memory>
#include <string>
#include <string_view>

namespace netrb {

/// Scalar expression in the variables `t` and `x`.
///
/// Grammar: numbers, `t`, `x`, `pi`, the binary operators `+ - * / ^`,
/// unary minus, parentheses and the functions `sin`, `cos`, `exp`, `sqrt`.
/// Parsed once; evaluation is a tree walk with no allocation.
class Expression {
 public:
  struct Node;

  Expression();  // the constant 0
  static Expression parse(std::string_view text);
  static Expression constant(double value);

  double operator()(double t, double x = 0.0) const;

  bool depends_on_t() const;
  bool depends_on_x() const;
  const std::string& text() const { return text_; }

 private:
  std::shared_ptr<const Node> root_;
  std::string text_;
};

}  // namespace netrb
