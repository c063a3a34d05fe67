#include "narfix/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace narfix::nn {

using json = nlohmann::json;

Tensor& ParamGroup::add(const std::string& name, Tensor t) {
  auto [it, inserted] = params_.emplace(name, std::move(t));
  if (!inserted) throw std::invalid_argument("duplicate parameter name " + name);
  return it->second;
}

Tensor& ParamGroup::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

const Tensor& ParamGroup::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

void ParamGroup::zero_grad() {
  for (auto& [name, t] : params_) t.node->grad.assign(t.size(), 0.0);
}

size_t ParamGroup::total_size() const {
  size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

Tensor glorot(int rows, int cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> uni(-limit, limit);
  std::vector<double> data(static_cast<size_t>(rows) * static_cast<size_t>(cols));
  for (auto& v : data) v = uni(rng);
  return Tensor::from({rows, cols}, std::move(data), true);
}

Tensor zeros_param(std::vector<int> shape) { return Tensor::zeros(std::move(shape), true); }

void AdamState::step(ParamGroup& params, double lr) {
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (auto& [name, t] : params.all()) {
    if (t.node->grad.size() != t.size()) t.node->grad.assign(t.size(), 0.0);
    auto& mv = m[name];
    auto& vv = v[name];
    if (mv.size() != t.size()) mv.assign(t.size(), 0.0);
    if (vv.size() != t.size()) vv.assign(t.size(), 0.0);
    for (size_t i = 0; i < t.size(); ++i) {
      const double g = t.node->grad[i];
      mv[i] = beta1 * mv[i] + (1.0 - beta1) * g;
      vv[i] = beta2 * vv[i] + (1.0 - beta2) * g * g;
      const double mhat = mv[i] / bc1;
      const double vhat = vv[i] / bc2;
      t.node->val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double LrSchedule::at(long step) const {
  if (warmup_steps > 0 && step < warmup_steps)
    return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return peak_lr;
  const double frac = static_cast<double>(step - warmup_steps) /
                      static_cast<double>(total_steps - warmup_steps);
  return peak_lr * std::max(0.0, 1.0 - frac);
}

double grad_check(const std::function<Tensor()>& loss_fn, ParamGroup& params, double eps) {
  params.zero_grad();
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item()))
    throw std::runtime_error("grad_check: non-finite loss " + std::to_string(loss.item()));
  backward(loss);

  double max_rel = 0.0;
  for (auto& [name, t] : params.all()) {
    for (size_t i = 0; i < t.size(); ++i) {
      const double keep = t.node->val[i];
      double up, dn;
      {
        NoGradGuard ng;
        t.node->val[i] = keep + eps;
        up = loss_fn().item();
        t.node->val[i] = keep - eps;
        dn = loss_fn().item();
        t.node->val[i] = keep;
      }
      const double numeric = (up - dn) / (2.0 * eps);
      const double analytic = t.node->grad.size() == t.size() ? t.node->grad[i] : 0.0;
      // Below the floor the comparison degrades to an absolute tolerance:
      // central differences on an O(1) loss carry ~1e-10 roundoff, which would
      // otherwise dominate the ratio for near-zero gradient elements.
      const double denom = std::max(1e-4, std::abs(numeric) + std::abs(analytic));
      max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
    }
  }
  return max_rel;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'N', 'A', 'R', 'F', 'I', 'X', 'C', '1'};

void write_block(std::ofstream& out, const std::vector<double>& data, bool f32) {
  if (f32) {
    std::vector<float> buf(data.begin(), data.end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  } else {
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
}

void read_block(std::ifstream& in, std::vector<double>& data, size_t count, bool f32) {
  data.resize(count);
  if (f32) {
    std::vector<float> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    for (size_t i = 0; i < count; ++i) data[i] = static_cast<double>(buf[i]);
  } else {
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  }
  if (!in) throw std::runtime_error("checkpoint truncated");
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& meta, const ParamGroup& params,
                     const AdamState* opt) {
  if (meta.precision != "f32" && meta.precision != "f64")
    throw std::invalid_argument("precision must be f32 or f64");
  const bool f32 = meta.precision == "f32";

  json header;
  header["version"] = 1;
  header["precision"] = meta.precision;
  header["config"] = meta.config;
  header["vocab"] = meta.vocab;
  json manifest = json::array();
  for (const auto& [name, t] : params.all())
    manifest.push_back({{"name", name}, {"shape", t.shape()}});
  header["params"] = manifest;
  header["optimizer"] = opt != nullptr;
  if (opt) header["opt_step"] = opt->step_count;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kMagic, 8);
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : params.all()) write_block(out, t.val(), f32);
  if (opt) {
    for (const auto& [name, t] : params.all()) {
      auto it = opt->m.find(name);
      std::vector<double> zero(t.size(), 0.0);
      write_block(out, it != opt->m.end() ? it->second : zero, f32);
    }
    for (const auto& [name, t] : params.all()) {
      auto it = opt->v.find(name);
      std::vector<double> zero(t.size(), 0.0);
      write_block(out, it != opt->v.end() ? it->second : zero, f32);
    }
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path, ParamGroup& params, AdamState* opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + " is not a checkpoint file");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("checkpoint header truncated");
  json header = json::parse(hs);

  Checkpoint meta;
  meta.precision = header.at("precision").get<std::string>();
  meta.config = header.at("config");
  meta.vocab = header.at("vocab").get<std::vector<std::string>>();
  const bool f32 = meta.precision == "f32";

  for (const auto& entry : header.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    size_t count = 1;
    for (int d : shape) count *= static_cast<size_t>(d);
    std::vector<double> data;
    read_block(in, data, count, f32);
    if (params.has(name)) {
      Tensor& t = params.get(name);
      if (t.shape() != shape)
        throw std::runtime_error("checkpoint shape mismatch for " + name);
      t.node->val = std::move(data);
    } else {
      params.add(name, Tensor::from(shape, std::move(data), true));
    }
  }
  if (header.at("optimizer").get<bool>() && opt) {
    opt->step_count = header.at("opt_step").get<long>();
    for (const auto& [name, t] : params.all()) read_block(in, opt->m[name], t.size(), f32);
    for (const auto& [name, t] : params.all()) read_block(in, opt->v[name], t.size(), f32);
  }
  return meta;
}

}  // namespace narfix::nn
