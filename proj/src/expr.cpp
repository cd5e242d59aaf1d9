#include "hdi/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <vector>

namespace hdi {

struct Expression::Node {
  enum Kind { number, variable, add, sub, mul, div, pow, neg, call } kind;
  double value = 0;      // number
  int var = 0;           // variable: 0,1,2 for x,y,z
  int fn = 0;            // call: 0 exp, 1 sin, 2 cos, 3 sqrt, 4 bump
  std::shared_ptr<const Node> a, b;
};

namespace {

using Node = Expression::Node;
using NodePtr = std::shared_ptr<const Node>;

NodePtr make(Node n) { return std::make_shared<const Node>(std::move(n)); }

class Parser {
 public:
  explicit Parser(const std::string& s) : s_(s) {}

  NodePtr run() {
    NodePtr e = expr();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected trailing input");
    return e;
  }

 private:
  const std::string& s_;
  size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ExprError(msg, static_cast<int>(pos_) + 1);
  }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) { ++pos_; return true; }
    return false;
  }

  NodePtr expr() {
    NodePtr lhs = term();
    for (;;) {
      if (eat('+')) lhs = make({Node::add, 0, 0, 0, lhs, term()});
      else if (eat('-')) lhs = make({Node::sub, 0, 0, 0, lhs, term()});
      else return lhs;
    }
  }

  NodePtr term() {
    NodePtr lhs = unary();
    for (;;) {
      if (eat('*')) lhs = make({Node::mul, 0, 0, 0, lhs, unary()});
      else if (eat('/')) lhs = make({Node::div, 0, 0, 0, lhs, unary()});
      else return lhs;
    }
  }

  NodePtr unary() {
    if (eat('-')) return make({Node::neg, 0, 0, 0, unary(), nullptr});
    if (eat('+')) return unary();
    return power();
  }

  NodePtr power() {
    NodePtr base = atom();
    if (eat('^')) return make({Node::pow, 0, 0, 0, base, unary()});  // right-assoc
    return base;
  }

  NodePtr atom() {
    skip_ws();
    if (pos_ >= s_.size()) fail("unexpected end of expression");
    char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr e = expr();
      if (!eat(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const char* start = s_.c_str() + pos_;
      char* end = nullptr;
      double v = std::strtod(start, &end);
      if (end == start) fail("bad number");
      pos_ += end - start;
      return make({Node::number, v, 0, 0, nullptr, nullptr});
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t begin = pos_;
      while (pos_ < s_.size() &&
             (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
        ++pos_;
      std::string id = s_.substr(begin, pos_ - begin);
      if (id == "x" || id == "y" || id == "z")
        return make({Node::variable, 0, id[0] - 'x', 0, nullptr, nullptr});
      if (id == "pi") return make({Node::number, M_PI, 0, 0, nullptr, nullptr});
      static const char* fns[] = {"exp", "sin", "cos", "sqrt", "bump"};
      for (int f = 0; f < 5; ++f)
        if (id == fns[f]) {
          if (!eat('(')) fail("expected '(' after " + id);
          NodePtr arg = expr();
          if (!eat(')')) fail("expected ')'");
          return make({Node::call, 0, 0, f, arg, nullptr});
        }
      pos_ = begin;
      fail("unknown identifier '" + id + "'");
    }
    fail(std::string("unexpected character '") + c + "'");
  }
};

double eval_node(const Node& n, const Eigen::Vector3d& x) {
  switch (n.kind) {
    case Node::number: return n.value;
    case Node::variable: return x[n.var];
    case Node::add: return eval_node(*n.a, x) + eval_node(*n.b, x);
    case Node::sub: return eval_node(*n.a, x) - eval_node(*n.b, x);
    case Node::mul: return eval_node(*n.a, x) * eval_node(*n.b, x);
    case Node::div: return eval_node(*n.a, x) / eval_node(*n.b, x);
    case Node::pow: return std::pow(eval_node(*n.a, x), eval_node(*n.b, x));
    case Node::neg: return -eval_node(*n.a, x);
    case Node::call: {
      double u = eval_node(*n.a, x);
      switch (n.fn) {
        case 0: return std::exp(u);
        case 1: return std::sin(u);
        case 2: return std::cos(u);
        case 3: return std::sqrt(u);
        default: return u < 1.0 ? std::exp(-1.0 / (1.0 - u)) : 0.0;
      }
    }
  }
  return 0;
}

}  // namespace

Expression Expression::parse(const std::string& text) {
  Expression e;
  e.text_ = text;
  e.root_ = Parser(text).run();
  return e;
}

double Expression::eval(const Eigen::Vector3d& x) const {
  if (!root_) throw std::logic_error("Expression: empty");
  return eval_node(*root_, x);
}

}  // namespace hdi
