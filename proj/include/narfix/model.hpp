#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "narfix/editlabel.hpp"
#include "narfix/params.hpp"
#include "narfix/tensor.hpp"

namespace narfix::model {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  std::string arch = "nar";  // "nar" or "ar"
  int vocab_size = 0;
  int d_model = 64;
  int heads = 4;
  int enc_layers = 4;
  int dec_layers = 4;
  int split_k = 2;        // last split_k decoder layers form the second stage
  int ffn_mult = 2;       // feed-forward hidden width = ffn_mult * d_model
  int max_repair_len = 8;      // length classes 0..max_repair_len-1
  int max_seq_len = 128;       // source and target positions
  int p_max = 64;              // parent-index table capacity
  double tau = 0.7;            // stage-1 retention confidence threshold
  double alpha = 0.1;          // weight on action/length losses
  double lambda = 0.1;         // weight on dependency loss
  double dropout = 0.1;
  bool use_action_predictor = true;
  bool use_dependency_extractor = true;
  bool use_two_stage = true;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Maps each target (expanded) position back to its source token and to its
// offset inside that token's repair fragment.
struct ExpansionMap {
  std::vector<int> source;  // target position -> source token index
  std::vector<int> offset;  // target position -> fragment offset
  int size() const { return static_cast<int>(source.size()); }
};

// Everything observable about one two-stage decode.
struct DecodeTrace {
  nn::Tensor logits_first;           // [m, V]
  nn::Tensor logits_second;          // [m, V]; undefined in single-stage mode
  std::vector<int> first_argmax;     // stage-1 argmax token per position
  std::vector<double> first_maxprob; // stage-1 max softmax probability
  std::vector<char> retained;        // 1 = kept from stage 1, 0 = re-generated
  std::vector<int> final_tokens;     // decoded output ids
  int decoder_passes = 0;
};

// Forward products needed by the loss; produced by NarModel::forward.
struct ForwardOut {
  nn::Tensor act_logits;  // [n, 4]
  nn::Tensor len_logits;  // [n, max_repair_len]
  nn::Tensor dep_logits;  // [m*m, p_max]; undefined when extractor is off
  ExpansionMap map;
  DecodeTrace trace;
};

struct Losses {
  nn::Tensor total, dec, act, len, depend;
};

class NarModel {
 public:
  NarModel(ModelConfig config, uint64_t init_seed);

  ModelConfig cfg;
  nn::ParamGroup params;
  bool train_mode = false;
  std::mt19937_64 drop_rng{0x5eed5eedULL};

  // Encoder over source token ids (no padding assumed within one sample).
  nn::Tensor encode(const std::vector<int>& ids);

  // Conv(3) -> ReLU -> Dropout -> two linear heads.
  std::pair<nn::Tensor, nn::Tensor> predict_repair(const nn::Tensor& enc);

  // Soft-copy expansion: target row = enc[source] + fragment-offset embedding,
  // refined by one cross-attention block over the encoder output.
  std::pair<nn::Tensor, ExpansionMap> expand_to_target(const nn::Tensor& enc,
                                                       const std::vector<int>& lengths);

  // Pairwise ancestor logits [m*m, p_max] and fused features H.
  std::pair<nn::Tensor, nn::Tensor> extract_and_fuse(const nn::Tensor& dec_in);

  // Two-stage decoding over fused features; exactly two decoder passes
  // (one when two-stage refinement is disabled).
  DecodeTrace decode_two_stage(const nn::Tensor& fused, const nn::Tensor& enc,
                               const std::vector<int>& source_ids,
                               const std::vector<editlabel::RepairAction>& actions,
                               const ExpansionMap& map);

  // Full training-path forward from a labeled sample.
  ForwardOut forward(const std::vector<int>& source_ids,
                     const std::vector<editlabel::RepairAction>& actions,
                     const std::vector<int>& lengths);

  Losses compute_losses(const ForwardOut& out,
                        const std::vector<editlabel::RepairAction>& gold_actions,
                        const std::vector<int>& gold_lengths,
                        const std::vector<int>& gold_dep_cells,  // m*m, -1 = ignore
                        const std::vector<int>& fixed_ids);

 private:
  nn::Tensor mha(const nn::Tensor& q_in, const nn::Tensor& kv_in,
                 const std::string& prefix, const std::vector<double>* add_mask);
  nn::Tensor ffn(const nn::Tensor& x, const std::string& prefix);
  nn::Tensor ln(const nn::Tensor& x, const std::string& prefix);
  nn::Tensor drop(const nn::Tensor& x);
  nn::Tensor decoder_layer(const nn::Tensor& x, const nn::Tensor& enc,
                           const std::string& prefix);
  nn::Tensor output_logits(const nn::Tensor& x);
  void init_params(uint64_t seed);
};

// Greedy autoregressive baseline sharing the encoder/decoder-layer shapes.
class ArModel {
 public:
  ArModel(ModelConfig config, uint64_t init_seed);

  ModelConfig cfg;
  nn::ParamGroup params;
  bool train_mode = false;
  std::mt19937_64 drop_rng{0x5eed5eedULL};

  nn::Tensor encode(const std::vector<int>& ids);

  // Teacher-forced logits over [BOS] + target; rows align with target + [EOS].
  nn::Tensor teacher_logits(const nn::Tensor& enc, const std::vector<int>& target_ids);

  // Greedy decode; one full decoder pass per emitted token. When force_len > 0
  // exactly that many tokens are emitted and [EOS] is ignored.
  std::vector<int> decode_greedy(const nn::Tensor& enc, int max_len, int force_len,
                                 int* passes_out);

 private:
  nn::Tensor mha(const nn::Tensor& q_in, const nn::Tensor& kv_in,
                 const std::string& prefix, const std::vector<double>* add_mask);
  nn::Tensor ffn(const nn::Tensor& x, const std::string& prefix);
  nn::Tensor ln(const nn::Tensor& x, const std::string& prefix);
  nn::Tensor drop(const nn::Tensor& x);
  void init_params(uint64_t seed);
};

}  // namespace narfix::model
