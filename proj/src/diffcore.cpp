#include "ecopinn/diffcore.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "ecopinn/textio.hpp"

namespace ecopinn::diff {

namespace {

[[noreturn]] void shape_error(const char* op, const Mat& a, const Mat& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                              "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                              "x" + std::to_string(b.cols()) + ")");
}

bool is_scalar(const Mat& m) { return m.rows() == 1 && m.cols() == 1; }

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Mat m) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(m);
  return push(std::move(n));
}

Var Tape::input(Mat m) {
  Node n;
  n.op = Op::kInput;
  n.value = std::move(m);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.op = Op::kParam;
  n.value = p.value;
  n.pref = &p;
  n.requires_grad = true;
  return push(std::move(n));
}

const Mat& Tape::grad(Var v) const {
  const Node& n = nodes_[v.idx];
  if (n.op == Op::kParam) return n.pref->grad;
  if (n.grad.size() == 0)
    throw std::logic_error("grad requested before any backward() pass");
  return n.grad;
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad.resize(0, 0);
}

void Tape::clear() { nodes_.clear(); }

Var make_unary(Tape& t, Op op, Var a) {
  const Mat& x = t.nodes_[a.idx].value;
  Tape::Node n;
  n.op = op;
  n.a = a.idx;
  n.requires_grad = t.nodes_[a.idx].requires_grad;
  switch (op) {
    case Op::kTranspose: n.value = x.transpose(); break;
    case Op::kSum: n.value = Mat::Constant(1, 1, x.sum()); break;
    case Op::kMean: n.value = Mat::Constant(1, 1, x.mean()); break;
    case Op::kSquare: n.value = x.array().square(); break;
    case Op::kSqrt: n.value = x.array().sqrt(); break;
    case Op::kExp: n.value = x.array().exp(); break;
    case Op::kLog: n.value = x.array().log(); break;
    case Op::kSoftplus: n.value = x.unaryExpr([](double v) { return stable_softplus(v); }); break;
    case Op::kRelu: n.value = x.cwiseMax(0.0); break;
    default: throw std::logic_error("make_unary: bad op");
  }
  return t.push(std::move(n));
}

Var make_binary(Tape& t, Op op, Var a, Var b) {
  const Mat& x = t.nodes_[a.idx].value;
  const Mat& y = t.nodes_[b.idx].value;
  Tape::Node n;
  n.op = op;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = t.nodes_[a.idx].requires_grad || t.nodes_[b.idx].requires_grad;
  switch (op) {
    case Op::kAdd:
      if (is_scalar(y)) n.value = x.array() + y(0, 0);
      else if (is_scalar(x)) n.value = y.array() + x(0, 0);
      else if (x.rows() == y.rows() && x.cols() == y.cols()) n.value = x + y;
      else shape_error("add", x, y);
      break;
    case Op::kSub:
      if (is_scalar(y)) n.value = x.array() - y(0, 0);
      else if (is_scalar(x)) n.value = x(0, 0) - y.array();
      else if (x.rows() == y.rows() && x.cols() == y.cols()) n.value = x - y;
      else shape_error("sub", x, y);
      break;
    case Op::kMul:
      if (is_scalar(y)) n.value = x * y(0, 0);
      else if (is_scalar(x)) n.value = y * x(0, 0);
      else if (x.rows() == y.rows() && x.cols() == y.cols()) n.value = x.cwiseProduct(y);
      else shape_error("mul", x, y);
      break;
    case Op::kDiv:
      if (is_scalar(y)) n.value = x / y(0, 0);
      else if (is_scalar(x)) n.value = x(0, 0) * y.cwiseInverse();
      else if (x.rows() == y.rows() && x.cols() == y.cols()) n.value = x.cwiseQuotient(y);
      else shape_error("div", x, y);
      break;
    case Op::kMatMul:
      if (x.cols() != y.rows()) shape_error("matmul", x, y);
      n.value = x * y;
      break;
    default: throw std::logic_error("make_binary: bad op");
  }
  return t.push(std::move(n));
}

Var add(Var a, Var b) { return make_binary(*a.tape, Op::kAdd, a, b); }
Var sub(Var a, Var b) { return make_binary(*a.tape, Op::kSub, a, b); }
Var mul(Var a, Var b) { return make_binary(*a.tape, Op::kMul, a, b); }
Var div(Var a, Var b) { return make_binary(*a.tape, Op::kDiv, a, b); }
Var matmul(Var a, Var b) { return make_binary(*a.tape, Op::kMatMul, a, b); }
Var transpose(Var a) { return make_unary(*a.tape, Op::kTranspose, a); }
Var sum(Var a) { return make_unary(*a.tape, Op::kSum, a); }
Var mean(Var a) { return make_unary(*a.tape, Op::kMean, a); }
Var square(Var a) { return make_unary(*a.tape, Op::kSquare, a); }
Var sqrt(Var a) { return make_unary(*a.tape, Op::kSqrt, a); }
Var exp(Var a) { return make_unary(*a.tape, Op::kExp, a); }
Var log(Var a) { return make_unary(*a.tape, Op::kLog, a); }
Var softplus(Var a) { return make_unary(*a.tape, Op::kSoftplus, a); }
Var relu(Var a) { return make_unary(*a.tape, Op::kRelu, a); }

Var softmax_masked_row(Var x, const std::vector<bool>& mask) {
  Tape& t = *x.tape;
  const Mat& v = t.nodes_[x.idx].value;
  if (static_cast<int>(mask.size()) != v.cols())
    throw std::invalid_argument("softmax_masked_row: mask length " + std::to_string(mask.size()) +
                                " vs " + std::to_string(v.cols()) + " columns");
  Tape::Node n;
  n.op = Op::kSoftmaxMaskedRow;
  n.a = x.idx;
  n.requires_grad = t.nodes_[x.idx].requires_grad;
  n.aux = Mat::Zero(1, v.cols());
  bool any = false;
  for (int j = 0; j < v.cols(); ++j) {
    n.aux(0, j) = mask[j] ? 1.0 : 0.0;
    any = any || mask[j];
  }
  if (!any) throw std::invalid_argument("softmax_masked_row: all columns masked");
  n.value = Mat::Zero(v.rows(), v.cols());
  for (int r = 0; r < v.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < v.cols(); ++j)
      if (mask[j]) mx = std::max(mx, v(r, j));
    double z = 0;
    for (int j = 0; j < v.cols(); ++j)
      if (mask[j]) z += std::exp(v(r, j) - mx);
    for (int j = 0; j < v.cols(); ++j)
      if (mask[j]) n.value(r, j) = std::exp(v(r, j) - mx) / z;
  }
  return t.push(std::move(n));
}

Var softmax_row(Var x) {
  return softmax_masked_row(x, std::vector<bool>(x.tape->value(x).cols(), true));
}

Var layer_norm_row(Var x, Var gain, Var bias, double eps) {
  Tape& t = *x.tape;
  const Mat& v = t.nodes_[x.idx].value;
  const Mat& g = t.nodes_[gain.idx].value;
  const Mat& b = t.nodes_[bias.idx].value;
  if (g.rows() != 1 || g.cols() != v.cols()) shape_error("layer_norm_row(gain)", v, g);
  if (b.rows() != 1 || b.cols() != v.cols()) shape_error("layer_norm_row(bias)", v, b);
  Tape::Node n;
  n.op = Op::kLayerNormRow;
  n.a = x.idx;
  n.b = gain.idx;
  n.c = bias.idx;
  n.x0 = eps;
  n.requires_grad = t.nodes_[x.idx].requires_grad || t.nodes_[gain.idx].requires_grad ||
                    t.nodes_[bias.idx].requires_grad;
  n.value = Mat::Zero(v.rows(), v.cols());
  n.aux = Mat::Zero(v.rows(), v.cols());  // cached normalized rows
  for (int r = 0; r < v.rows(); ++r) {
    double mu = v.row(r).mean();
    double var = (v.row(r).array() - mu).square().mean();
    double inv = 1.0 / std::sqrt(var + eps);
    n.aux.row(r) = (v.row(r).array() - mu) * inv;
    n.value.row(r) = n.aux.row(r).cwiseProduct(g) + b;
  }
  return t.push(std::move(n));
}

Var concat2(Op op, Var a, Var b) {
  Tape& t = *a.tape;
  const Mat& x = t.nodes_[a.idx].value;
  const Mat& y = t.nodes_[b.idx].value;
  Tape::Node n;
  n.op = op;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = t.nodes_[a.idx].requires_grad || t.nodes_[b.idx].requires_grad;
  if (op == Op::kConcatRows) {
    if (x.cols() != y.cols()) shape_error("concat_rows", x, y);
    n.value.resize(x.rows() + y.rows(), x.cols());
    n.value << x, y;
    n.i0 = static_cast<int>(x.rows());
  } else {
    if (x.rows() != y.rows()) shape_error("concat_cols", x, y);
    n.value.resize(x.rows(), x.cols() + y.cols());
    n.value << x, y;
    n.i0 = static_cast<int>(x.cols());
  }
  return t.push(std::move(n));
}

Var concat_rows(Var a, Var b) { return concat2(Op::kConcatRows, a, b); }
Var concat_cols(Var a, Var b) { return concat2(Op::kConcatCols, a, b); }

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty list");
  Var out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out = concat_rows(out, parts[i]);
  return out;
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty list");
  Var out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out = concat_cols(out, parts[i]);
  return out;
}

Var slice_rows(Var x, int row0, int nrows) {
  Tape& t = *x.tape;
  const Mat& v = t.nodes_[x.idx].value;
  if (row0 < 0 || nrows < 1 || row0 + nrows > v.rows())
    throw std::invalid_argument("slice_rows: rows [" + std::to_string(row0) + "," +
                                std::to_string(row0 + nrows) + ") out of " +
                                std::to_string(v.rows()));
  Tape::Node n;
  n.op = Op::kSliceRows;
  n.a = x.idx;
  n.i0 = row0;
  n.i1 = nrows;
  n.requires_grad = t.nodes_[x.idx].requires_grad;
  n.value = v.middleRows(row0, nrows);
  return t.push(std::move(n));
}

void Tape::backward(Var root) {
  const Node& r = nodes_[root.idx];
  if (r.value.rows() != 1 || r.value.cols() != 1)
    throw std::invalid_argument("backward: root must be a 1x1 scalar, got " +
                                std::to_string(r.value.rows()) + "x" +
                                std::to_string(r.value.cols()));

  // Fresh sweep gradients; accumulated into persistent grads at the end so
  // repeated backward() calls add up.
  std::vector<Mat> sg(root.idx + 1);
  auto acc = [&](int idx, const Mat& g) {
    if (!nodes_[idx].requires_grad) return;
    if (sg[idx].size() == 0)
      sg[idx] = Mat::Zero(nodes_[idx].value.rows(), nodes_[idx].value.cols());
    sg[idx] += g;
  };

  sg[root.idx] = Mat::Constant(1, 1, 1.0);

  for (int i = root.idx; i >= 0; --i) {
    if (sg[i].size() == 0) continue;
    Node& n = nodes_[i];
    const Mat& g = sg[i];
    switch (n.op) {
      case Op::kConstant:
      case Op::kInput:
      case Op::kParam:
        break;
      case Op::kAdd: {
        const Mat& x = nodes_[n.a].value;
        const Mat& y = nodes_[n.b].value;
        if (is_scalar(x) && !is_scalar(y)) acc(n.a, Mat::Constant(1, 1, g.sum()));
        else acc(n.a, g);
        if (is_scalar(y) && !is_scalar(x)) acc(n.b, Mat::Constant(1, 1, g.sum()));
        else acc(n.b, g);
        break;
      }
      case Op::kSub: {
        const Mat& x = nodes_[n.a].value;
        const Mat& y = nodes_[n.b].value;
        if (is_scalar(x) && !is_scalar(y)) acc(n.a, Mat::Constant(1, 1, g.sum()));
        else acc(n.a, g);
        if (is_scalar(y) && !is_scalar(x)) acc(n.b, Mat::Constant(1, 1, -g.sum()));
        else acc(n.b, Mat(-g));
        break;
      }
      case Op::kMul: {
        const Mat& x = nodes_[n.a].value;
        const Mat& y = nodes_[n.b].value;
        if (is_scalar(y) && !is_scalar(x)) {
          acc(n.a, Mat(g * y(0, 0)));
          acc(n.b, Mat::Constant(1, 1, g.cwiseProduct(x).sum()));
        } else if (is_scalar(x) && !is_scalar(y)) {
          acc(n.b, Mat(g * x(0, 0)));
          acc(n.a, Mat::Constant(1, 1, g.cwiseProduct(y).sum()));
        } else {
          acc(n.a, g.cwiseProduct(y));
          acc(n.b, g.cwiseProduct(x));
        }
        break;
      }
      case Op::kDiv: {
        const Mat& x = nodes_[n.a].value;
        const Mat& y = nodes_[n.b].value;
        if (is_scalar(y) && !is_scalar(x)) {
          acc(n.a, Mat(g / y(0, 0)));
          acc(n.b, Mat::Constant(1, 1, -g.cwiseProduct(x).sum() / (y(0, 0) * y(0, 0))));
        } else if (is_scalar(x) && !is_scalar(y)) {
          acc(n.a, Mat::Constant(1, 1, g.cwiseQuotient(y).sum()));
          acc(n.b, Mat(-x(0, 0) * g.cwiseQuotient(y.cwiseProduct(y))));
        } else {
          acc(n.a, g.cwiseQuotient(y));
          acc(n.b, Mat(-g.cwiseProduct(x).cwiseQuotient(y.cwiseProduct(y))));
        }
        break;
      }
      case Op::kMatMul:
        acc(n.a, g * nodes_[n.b].value.transpose());
        acc(n.b, nodes_[n.a].value.transpose() * g);
        break;
      case Op::kTranspose:
        acc(n.a, g.transpose());
        break;
      case Op::kSum:
        acc(n.a, Mat::Constant(nodes_[n.a].value.rows(), nodes_[n.a].value.cols(), g(0, 0)));
        break;
      case Op::kMean:
        acc(n.a, Mat::Constant(nodes_[n.a].value.rows(), nodes_[n.a].value.cols(),
                               g(0, 0) / nodes_[n.a].value.size()));
        break;
      case Op::kSquare:
        acc(n.a, 2.0 * g.cwiseProduct(nodes_[n.a].value));
        break;
      case Op::kSqrt:
        acc(n.a, Mat(0.5 * g.cwiseQuotient(n.value)));
        break;
      case Op::kExp:
        acc(n.a, g.cwiseProduct(n.value));
        break;
      case Op::kLog:
        acc(n.a, g.cwiseQuotient(nodes_[n.a].value));
        break;
      case Op::kSoftplus:
        acc(n.a, g.cwiseProduct(nodes_[n.a].value.unaryExpr([](double v) { return sigmoid(v); })));
        break;
      case Op::kRelu:
        acc(n.a, g.cwiseProduct(
                     nodes_[n.a].value.unaryExpr([](double v) { return v > 0 ? 1.0 : 0.0; })));
        break;
      case Op::kSoftmaxMaskedRow: {
        Mat gx = Mat::Zero(n.value.rows(), n.value.cols());
        for (int r = 0; r < n.value.rows(); ++r) {
          double dot = g.row(r).cwiseProduct(n.value.row(r)).sum();
          gx.row(r) = n.value.row(r).array() * (g.row(r).array() - dot);
        }
        acc(n.a, gx);
        break;
      }
      case Op::kLayerNormRow: {
        const Mat& x = nodes_[n.a].value;
        const Mat& gain = nodes_[n.b].value;
        const int cols = static_cast<int>(x.cols());
        Mat gx = Mat::Zero(x.rows(), cols);
        Mat ggain = Mat::Zero(1, cols);
        Mat gbias = Mat::Zero(1, cols);
        for (int r = 0; r < x.rows(); ++r) {
          double mu = x.row(r).mean();
          double var = (x.row(r).array() - mu).square().mean();
          double inv = 1.0 / std::sqrt(var + n.x0);
          Eigen::RowVectorXd xhat = n.aux.row(r);
          Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gain);
          double m1 = dxhat.mean();
          double m2 = dxhat.cwiseProduct(xhat).mean();
          gx.row(r) = inv * (dxhat.array() - m1 - xhat.array() * m2).matrix();
          ggain += g.row(r).cwiseProduct(xhat);
          gbias += g.row(r);
        }
        acc(n.a, gx);
        acc(n.b, ggain);
        acc(n.c, gbias);
        break;
      }
      case Op::kConcatRows:
        acc(n.a, g.topRows(n.i0));
        acc(n.b, g.bottomRows(g.rows() - n.i0));
        break;
      case Op::kConcatCols:
        acc(n.a, g.leftCols(n.i0));
        acc(n.b, g.rightCols(g.cols() - n.i0));
        break;
      case Op::kSliceRows: {
        Mat gx = Mat::Zero(nodes_[n.a].value.rows(), nodes_[n.a].value.cols());
        gx.middleRows(n.i0, n.i1) = g;
        acc(n.a, gx);
        break;
      }
    }
  }

  // Fold sweep results into the persistent accumulators.
  for (int i = 0; i <= root.idx; ++i) {
    if (sg[i].size() == 0) continue;
    Node& n = nodes_[i];
    if (n.op == Op::kParam) {
      n.pref->grad += sg[i];
    } else {
      if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
      n.grad += sg[i];
    }
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (auto* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Mat& g = params_[i]->grad;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Mat mhat = m_[i] / bc1;
    Mat vhat = v_[i] / bc2;
    params_[i]->value.array() -= cfg_.lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

Parameter& ParamStore::add(const std::string& name, Mat init) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  auto p = std::make_unique<Parameter>(name, std::move(init));
  auto& ref = *p;
  params_[name] = std::move(p);
  return ref;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter " + name);
  return *it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter " + name);
  return *it->second;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params_) out.push_back(p.get());
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p->zero_grad();
}

void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "ecopinn-checkpoint v1\n";
  for (const auto& [name, p] : store.map()) {
    out << "param," << name << ',' << p->value.rows() << ',' << p->value.cols() << "\n";
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        if (c) out << ',';
        out << fmt_double(p->value(r, c));
      }
      out << "\n";
    }
  }
}

void load_checkpoint(ParamStore& store, const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty() || lines[0] != "ecopinn-checkpoint v1")
    throw std::runtime_error(path + ": not an ecopinn checkpoint");
  std::size_t i = 1;
  while (i < lines.size()) {
    if (lines[i].empty()) { ++i; continue; }
    auto f = split_csv(lines[i]);
    if (f.size() != 4 || f[0] != "param")
      throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": expected param header");
    const std::string name = f[1];
    const auto rows = parse_int(f[2], path);
    const auto cols = parse_int(f[3], path);
    Mat m(rows, cols);
    for (long r = 0; r < rows; ++r) {
      ++i;
      if (i >= lines.size()) throw std::runtime_error(path + ": truncated matrix " + name);
      auto vals = split_csv(lines[i]);
      if (static_cast<long>(vals.size()) != cols)
        throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": expected " +
                                 std::to_string(cols) + " values");
      for (long c = 0; c < cols; ++c) m(r, c) = parse_double(vals[c], path);
    }
    ++i;
    if (store.has(name)) {
      Parameter& p = store.at(name);
      if (p.value.rows() != rows || p.value.cols() != cols)
        throw std::runtime_error(path + ": shape mismatch for " + name);
      p.value = m;
    } else {
      store.add(name, m);
    }
  }
}

}  // namespace ecopinn::diff
