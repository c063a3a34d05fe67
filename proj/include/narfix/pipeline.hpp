#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "narfix/depmat.hpp"
#include "narfix/editlabel.hpp"
#include "narfix/model.hpp"
#include "narfix/toylang.hpp"

namespace narfix::pipeline {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Corpus record extended with gold labels and the sparse dependency grid of
// the fixed code.
struct LabeledRecord {
  toylang::CorpusRecord rec;
  editlabel::RepairLabels labels;
  std::vector<std::array<int, 3>> dep;  // upper triangle + diagonal

  std::vector<int> dense_dep() const;  // m*m cells, m = |fixed|
  int edited_count() const;            // tokens whose action != Keep
};

std::vector<toylang::CorpusRecord> load_corpus(const std::string& path);

LabeledRecord label_record(const toylang::CorpusRecord& rec, size_t p_max = 64);
void label_corpus(const std::string& corpus_path, const std::string& out_path,
                  int threads = 1, size_t p_max = 64);
std::vector<LabeledRecord> load_labeled(const std::string& path);

// --- training ----------------------------------------------------------------

struct TrainOptions {
  model::ModelConfig config;
  uint64_t seed = 1;
  int epochs = 3;
  int batch_size = 8;
  double peak_lr = 1e-3;
  int warmup_steps = 200;
  std::string precision = "f64";
  std::string resume;  // checkpoint to continue from (optional)
};

// Runs joint training over the labeled corpus; writes a checkpoint after every
// epoch (and at the end) to out_ckpt. Returns per-epoch log lines
// {epoch, L_total, L_dec, L_act, L_len, L_depend, lr}.
std::vector<nlohmann::json> train(const TrainOptions& opt, const std::string& labeled_path,
                                  const std::string& out_ckpt);

model::NarModel load_nar(const std::string& ckpt_path, toylang::Vocab& vocab_out);
model::ArModel load_ar(const std::string& ckpt_path, toylang::Vocab& vocab_out);

// --- inference -----------------------------------------------------------------

struct PatchCandidate {
  std::vector<std::string> tokens;
  double score = 0.0;      // token_lp + action_lp + length_lp
  double token_lp = 0.0;
  double action_lp = 0.0;
  double length_lp = 0.0;
  int variant_id = 0;      // enumeration index, used as the ranking tiebreak
  uint64_t sample_seed = 0;

  nlohmann::json to_json() const;
};

std::vector<PatchCandidate> repair(model::NarModel& m, const toylang::Vocab& vocab,
                                   const std::vector<std::string>& buggy, int k,
                                   uint64_t seed);

bool validate_patch(const std::vector<std::string>& candidate,
                    const std::vector<std::string>& reference);

// --- benchmark -----------------------------------------------------------------

struct BenchRow {
  int m = 0;
  int nar_passes = 0;
  int ar_passes = 0;
  double nar_ms = 0.0;
  double ar_ms = 0.0;
  double ratio = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  nlohmann::json to_json() const;
};

// Median-of-trials single-thread latency of a full NAR repair forward
// (2 decoder passes, identity lengths) vs AR greedy decode (m passes).
BenchReport bench_latency(model::NarModel& nar, model::ArModel& ar,
                          const std::vector<int>& lengths, int trials = 5);

// --- evaluation ----------------------------------------------------------------

struct EvalBucket {
  std::string name;
  long tokens = 0;          // evaluated token count
  long action_hits = 0;
  long length_hits = 0;
};

struct EvalTable {
  std::vector<EvalBucket> buckets;  // N<=10, 10<N<=20, 20<N<=50, N>50
  std::string to_csv() const;       // bucket, action_acc, length_acc (+ average)
  double average_action_acc() const;
  double average_length_acc() const;
};

// pred(record) -> (actions, lengths) per buggy token.
using PredictFn = std::function<std::pair<std::vector<editlabel::RepairAction>,
                                          std::vector<int>>(const LabeledRecord&)>;

EvalTable eval_with(const std::vector<LabeledRecord>& records, const PredictFn& pred);
EvalTable eval_predictor(model::NarModel& m, const toylang::Vocab& vocab,
                         const std::vector<LabeledRecord>& records);

// Average, over candidates, of Keep-position source tokens the candidate changed.
double count_overcorrections(const std::vector<std::vector<std::string>>& candidates,
                             const std::vector<std::string>& buggy,
                             const editlabel::RepairLabels& labels);

// --- similarity analysis ---------------------------------------------------------

struct SimilarityReport {
  std::string csv;                    // heat map + distance-bucket summary
  std::map<int, double> bucket_mean;  // AST distance (edges, 4 = ">=4") -> mean cosine
};

SimilarityReport analyze_similarity(model::NarModel& m, const toylang::Vocab& vocab,
                                    const std::vector<std::string>& fixed_tokens);

}  // namespace narfix::pipeline
