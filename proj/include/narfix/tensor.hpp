#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace narfix::nn {

// Reverse-mode scalar tape over dense double arrays. The op set is closed:
// exactly what the model math needs, nothing more.
struct TensorNode {
  std::vector<int> shape;
  std::vector<double> val;
  std::vector<double> grad;  // sized lazily, same length as val
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backfn;

  size_t size() const { return val.size(); }
  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node != nullptr; }
  const std::vector<int>& shape() const { return node->shape; }
  int rows() const { return node->shape[0]; }
  int cols() const { return node->shape.size() > 1 ? node->shape[1] : 1; }
  size_t size() const { return node->size(); }
  std::vector<double>& val() { return node->val; }
  const std::vector<double>& val() const { return node->val; }
  std::vector<double>& grad() { return node->grad; }
  bool requires_grad() const { return node->requires_grad; }
  double item() const { return node->val.at(0); }

  std::shared_ptr<TensorNode> node;
};

// Graph construction can be switched off for inference-only forwards.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

// --- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);        // [n,k]x[k,m]
Tensor transpose(const Tensor& a);                      // [n,m] -> [m,n]
Tensor add(const Tensor& a, const Tensor& b);           // same shape
Tensor add_rowvec(const Tensor& a, const Tensor& v);    // [n,d] + [d]
Tensor mul(const Tensor& a, const Tensor& b);           // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, const std::vector<double>& c);  // c is not differentiated
Tensor relu(const Tensor& a);
Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng, bool train);
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);                   // normalizes each row
Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& b,
                   int kernel);                         // x [n,din], w [kernel*din,dout]
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
Tensor row_gather(const Tensor& a, const std::vector<int>& idx);
Tensor replace_rows(const Tensor& a, const std::vector<char>& flags, const Tensor& v);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor col_slice(const Tensor& a, int start, int width);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor softmax_rows(const Tensor& a);
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          int ignore_index);            // mean NLL, scalar
Tensor sum(const Tensor& a);                            // scalar

void backward(const Tensor& loss);

}  // namespace narfix::nn
