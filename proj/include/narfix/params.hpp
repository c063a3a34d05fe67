#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "narfix/tensor.hpp"

namespace narfix::nn {

class ParamGroup {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  void zero_grad();
  size_t total_size() const;
  std::map<std::string, Tensor>& all() { return params_; }
  const std::map<std::string, Tensor>& all() const { return params_; }

 private:
  std::map<std::string, Tensor> params_;  // ordered, for stable serialization
};

// Scaled-uniform (Glorot-style) init for weight matrices.
Tensor glorot(int rows, int cols, std::mt19937_64& rng);
Tensor zeros_param(std::vector<int> shape);

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step_count = 0;
  std::map<std::string, std::vector<double>> m, v;

  void step(ParamGroup& params, double lr);
};

// Linear warmup to peak_lr, then linear decay to zero over total_steps.
struct LrSchedule {
  double peak_lr = 1e-3;
  long warmup_steps = 200;
  long total_steps = 10000;
  double at(long step) const;
};

// Central finite differences against analytic gradients; returns the max
// relative error over every parameter element. 64-bit only.
double grad_check(const std::function<Tensor()>& loss_fn, ParamGroup& params,
                  double eps = 1e-5);

// --- checkpoint format -----------------------------------------------------
// Magic, u64 header length, JSON header {version, precision, config, vocab,
// params manifest, optimizer flag}, then raw little-endian float blocks.

struct Checkpoint {
  nlohmann::json config;
  std::vector<std::string> vocab;
  std::string precision = "f64";  // "f32" or "f64"
};

void save_checkpoint(const std::string& path, const Checkpoint& meta, const ParamGroup& params,
                     const AdamState* opt = nullptr);
Checkpoint load_checkpoint(const std::string& path, ParamGroup& params,
                           AdamState* opt = nullptr);

}  // namespace narfix::nn
