#include "netrb/expression.hpp"

#include <cctype>
#include <cmath>
#include <numbers>
#include <vector>

#include "netrb/error.hpp"

namespace netrb {

struct Expression::Node {
  enum class Kind { Number, VarT, VarX, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Exp, Sqrt };
  Kind kind = Kind::Number;
  double value = 0.0;
  std::shared_ptr<const Node> lhs, rhs;
};

namespace {

using Node = Expression::Node;
using NodePtr = std::shared_ptr<const Node>;

NodePtr make_leaf(Node::Kind kind, double value = 0.0) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->value = value;
  return n;
}

NodePtr make_node(Node::Kind kind, NodePtr lhs, NodePtr rhs = nullptr) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->lhs = std::move(lhs);
  n->rhs = std::move(rhs);
  return n;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  NodePtr parse() {
    NodePtr root = parse_sum();
    skip_space();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("expression '" + std::string(text_) + "': " + what + " at offset " +
                      std::to_string(pos_));
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  NodePtr parse_sum() {
    NodePtr lhs = parse_product();
    for (;;) {
      if (accept('+')) {
        lhs = make_node(Node::Kind::Add, lhs, parse_product());
      } else if (accept('-')) {
        lhs = make_node(Node::Kind::Sub, lhs, parse_product());
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_product() {
    NodePtr lhs = parse_unary();
    for (;;) {
      if (accept('*')) {
        lhs = make_node(Node::Kind::Mul, lhs, parse_unary());
      } else if (accept('/')) {
        lhs = make_node(Node::Kind::Div, lhs, parse_unary());
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_unary() {
    if (accept('-')) return make_node(Node::Kind::Neg, parse_unary());
    if (accept('+')) return parse_unary();
    return parse_power();
  }

  // '^' is right associative and binds tighter than unary minus on its left.
  NodePtr parse_power() {
    NodePtr base = parse_primary();
    if (accept('^')) return make_node(Node::Kind::Pow, base, parse_unary());
    return base;
  }

  NodePtr parse_primary() {
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (accept('(')) {
      NodePtr inner = parse_sum();
      if (!accept(')')) fail("expected ')'");
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c))) return parse_identifier();
    fail(std::string("unexpected character '") + c + "'");
  }

  NodePtr parse_number() {
    const std::string rest(text_.substr(pos_));
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(rest, &used);
    } catch (const std::exception&) {
      fail("malformed number");
    }
    pos_ += used;
    return make_leaf(Node::Kind::Number, value);
  }

  NodePtr parse_identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && std::isalnum(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    const std::string_view name = text_.substr(start, pos_ - start);
    if (name == "t") return make_leaf(Node::Kind::VarT);
    if (name == "x") return make_leaf(Node::Kind::VarX);
    if (name == "pi") return make_leaf(Node::Kind::Number, std::numbers::pi);

    Node::Kind kind;
    if (name == "sin") {
      kind = Node::Kind::Sin;
    } else if (name == "cos") {
      kind = Node::Kind::Cos;
    } else if (name == "exp") {
      kind = Node::Kind::Exp;
    } else if (name == "sqrt") {
      kind = Node::Kind::Sqrt;
    } else {
      pos_ = start;
      fail("unknown identifier '" + std::string(name) + "'");
    }
    if (!accept('(')) fail("expected '(' after function name");
    NodePtr arg = parse_sum();
    if (!accept(')')) fail("expected ')'");
    return make_node(kind, arg);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

double evaluate(const Node& n, double t, double x) {
  using K = Node::Kind;
  switch (n.kind) {
    case K::Number: return n.value;
    case K::VarT: return t;
    case K::VarX: return x;
    case K::Neg: return -evaluate(*n.lhs, t, x);
    case K::Add: return evaluate(*n.lhs, t, x) + evaluate(*n.rhs, t, x);
    case K::Sub: return evaluate(*n.lhs, t, x) - evaluate(*n.rhs, t, x);
    case K::Mul: return evaluate(*n.lhs, t, x) * evaluate(*n.rhs, t, x);
    case K::Div: return evaluate(*n.lhs, t, x) / evaluate(*n.rhs, t, x);
    case K::Pow: return std::pow(evaluate(*n.lhs, t, x), evaluate(*n.rhs, t, x));
    case K::Sin: return std::sin(evaluate(*n.lhs, t, x));
    case K::Cos: return std::cos(evaluate(*n.lhs, t, x));
    case K::Exp: return std::exp(evaluate(*n.lhs, t, x));
    case K::Sqrt: return std::sqrt(evaluate(*n.lhs, t, x));
  }
  return 0.0;
}

bool depends_on(const Node& n, Node::Kind var) {
  if (n.kind == var) return true;
  return (n.lhs && depends_on(*n.lhs, var)) || (n.rhs && depends_on(*n.rhs, var));
}

}  // namespace

Expression::Expression() : root_(make_leaf(Node::Kind::Number, 0.0)), text_("0") {}

Expression Expression::parse(std::string_view text) {
  Expression e;
  e.root_ = Parser(text).parse();
  e.text_ = std::string(text);
  return e;
}

Expression Expression::constant(double value) {
  Expression e;
  e.root_ = make_leaf(Node::Kind::Number, value);
  e.text_ = std::to_string(value);
  return e;
}

double Expression::operator()(double t, double x) const { return evaluate(*root_, t, x); }

bool Expression::depends_on_t() const { return depends_on(*root_, Node::Kind::VarT); }
bool Expression::depends_on_x() const { return depends_on(*root_, Node::Kind::VarX); }

}  // namespace netrb
