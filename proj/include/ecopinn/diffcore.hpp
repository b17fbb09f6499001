#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace ecopinn::diff {

using Mat = Eigen::MatrixXd;

/// Named trainable matrix with its gradient accumulator.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until Tape::clear().
struct Var {
  Tape* tape = nullptr;
  int idx = -1;
};

enum class Op {
  kConstant,
  kInput,
  kParam,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatMul,
  kTranspose,
  kSum,
  kMean,
  kSquare,
  kSqrt,
  kExp,
  kLog,
  kSoftplus,
  kRelu,
  kSoftmaxMaskedRow,
  kLayerNormRow,
  kConcatRows,
  kConcatCols,
  kSliceRows,
};

/// Reverse-mode tape over dense double matrices (scalars are 1x1).
/// A tape is confined to one thread; separate tapes may run in parallel.
/// backward() accumulates: calling it twice without zeroing doubles every grad.
class Tape {
 public:
  Var constant(Mat m);
  Var scalar(double v) { return constant(Mat::Constant(1, 1, v)); }
  /// Leaf that participates in gradient computation (for inputs under test).
  Var input(Mat m);
  /// Leaf bound to an external Parameter; backward() accumulates into p.grad.
  Var param(Parameter& p);

  const Mat& value(Var v) const { return nodes_[v.idx].value; }
  /// Accumulated gradient of a node (for kParam nodes this is the Parameter's grad).
  const Mat& grad(Var v) const;

  /// Reverse sweep from a 1x1 root. Throws on non-scalar roots.
  void backward(Var root);

  void zero_grad();
  /// Drops all nodes but keeps capacity; invalidates outstanding Vars.
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    Mat value;
    Mat grad;             // persistent accumulator (empty until first backward)
    Mat aux;              // op-specific (e.g. softmax mask)
    Parameter* pref = nullptr;
    int i0 = 0, i1 = 0;   // op-specific ints (slice offsets)
    double x0 = 0.0;      // op-specific scalar (layer-norm eps)
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;

  Var push(Node n);
  friend Var make_unary(Tape& t, Op op, Var a);
  friend Var make_binary(Tape& t, Op op, Var a, Var b);
  friend Var softmax_masked_row(Var x, const std::vector<bool>& mask);
  friend Var layer_norm_row(Var x, Var gain, Var bias, double eps);
  friend Var concat2(Op op, Var a, Var b);
  friend Var slice_rows(Var x, int row0, int nrows);
};

// Elementwise binary ops allow a 1x1 operand on either side (scalar broadcast).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var sum(Var a);
Var mean(Var a);
Var square(Var a);
Var sqrt(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var relu(Var a);
/// Row-wise softmax; masked-out columns get exactly 0 and receive no gradient.
Var softmax_masked_row(Var x, const std::vector<bool>& mask);
Var softmax_row(Var x);
/// Row-wise layer norm with learned gain/bias (1 x cols each).
Var layer_norm_row(Var x, Var gain, Var bias, double eps = 1e-5);
Var concat_rows(Var a, Var b);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(Var a, Var b);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var x, int row0, int nrows);
inline Var slice_row(Var x, int row) { return slice_rows(x, row, 1); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Standard Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg = {});
  void step();
  void zero_grad();
  long step_count() const { return step_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_, v_;
  AdamConfig cfg_;
  long step_ = 0;
};

/// Ordered collection of named parameters; iteration order is the name order.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Mat init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  std::vector<Parameter*> all();
  void zero_grad();
  std::size_t size() const { return params_.size(); }
  const std::map<std::string, std::unique_ptr<Parameter>>& map() const { return params_; }

 private:
  std::map<std::string, std::unique_ptr<Parameter>> params_;
};

/// Text checkpoint of every parameter (exact round-trip).
void save_checkpoint(const ParamStore& store, const std::string& path);
/// Loads into an empty or matching store; shape mismatch is an error.
void load_checkpoint(ParamStore& store, const std::string& path);

}  // namespace ecopinn::diff
