#include "narfix/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <thread>

namespace narfix::pipeline {

using json = nlohmann::json;
using nn::Tensor;

namespace {

uint64_t mix64(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::vector<double> lsm_row(const std::vector<double>& val, int row, int cols) {
  const double* r = val.data() + static_cast<size_t>(row) * cols;
  const double mx = *std::max_element(r, r + cols);
  double z = 0.0;
  for (int j = 0; j < cols; ++j) z += std::exp(r[j] - mx);
  const double lz = std::log(z) + mx;
  std::vector<double> out(static_cast<size_t>(cols));
  for (int j = 0; j < cols; ++j) out[static_cast<size_t>(j)] = r[j] - lz;
  return out;
}

int argmax_of(const std::vector<double>& row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

int second_best_of(const std::vector<double>& row) {
  const int best = argmax_of(row);
  int second = best == 0 ? 1 : 0;
  for (int j = 0; j < static_cast<int>(row.size()); ++j)
    if (j != best && row[static_cast<size_t>(j)] > row[static_cast<size_t>(second)]) second = j;
  return second;
}

json record_to_json(const LabeledRecord& lr) {
  json j;
  j["buggy"] = lr.rec.buggy;
  j["fixed"] = lr.rec.fixed;
  j["mutation"] = toylang::mutation_name(lr.rec.mutation);
  j["seed"] = lr.rec.seed;
  json acts = json::array();
  for (auto a : lr.labels.actions) acts.push_back(editlabel::action_name(a));
  j["actions"] = acts;
  j["lengths"] = lr.labels.lengths;
  json dep = json::array();
  for (const auto& t : lr.dep) dep.push_back({t[0], t[1], t[2]});
  j["dep"] = dep;
  return j;
}

LabeledRecord record_from_json(const json& j) {
  LabeledRecord lr;
  lr.rec.buggy = j.at("buggy").get<std::vector<std::string>>();
  lr.rec.fixed = j.at("fixed").get<std::vector<std::string>>();
  auto mk = toylang::mutation_from_name(j.at("mutation").get<std::string>());
  if (!mk) throw SchemaError("unknown mutation kind in labeled record");
  lr.rec.mutation = *mk;
  lr.rec.seed = j.at("seed").get<uint64_t>();
  for (const auto& a : j.at("actions"))
    lr.labels.actions.push_back(editlabel::action_from_name(a.get<std::string>()));
  lr.labels.lengths = j.at("lengths").get<std::vector<int>>();
  if (lr.labels.actions.size() != lr.rec.buggy.size() ||
      lr.labels.lengths.size() != lr.rec.buggy.size())
    throw SchemaError("label arity does not match the buggy sequence");
  // Rebuild fragments by splitting fixed along the length prefix sums.
  size_t pos = 0;
  for (int len : lr.labels.lengths) {
    if (pos + static_cast<size_t>(len) > lr.rec.fixed.size())
      throw SchemaError("lengths overrun the fixed sequence");
    lr.labels.fragments.emplace_back(lr.rec.fixed.begin() + static_cast<long>(pos),
                                     lr.rec.fixed.begin() + static_cast<long>(pos + len));
    pos += static_cast<size_t>(len);
  }
  if (pos != lr.rec.fixed.size()) throw SchemaError("lengths do not sum to |fixed|");
  for (const auto& t : j.at("dep")) {
    if (!t.is_array() || t.size() != 3) throw SchemaError("malformed dep triple");
    lr.dep.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
  }
  return lr;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0.0 ? dot / denom : 0.0;
}

}  // namespace

// --- labeled records -------------------------------------------------------

std::vector<int> LabeledRecord::dense_dep() const {
  const size_t m = rec.fixed.size();
  auto mat = depmat::from_sparse(dep, m);
  return mat.cells;
}

int LabeledRecord::edited_count() const {
  int n = 0;
  for (auto a : labels.actions)
    if (a != editlabel::RepairAction::Keep) ++n;
  return n;
}

std::vector<toylang::CorpusRecord> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open corpus " + path);
  std::vector<toylang::CorpusRecord> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
    toylang::CorpusRecord r;
    r.buggy = j.at("buggy").get<std::vector<std::string>>();
    r.fixed = j.at("fixed").get<std::vector<std::string>>();
    auto mk = toylang::mutation_from_name(j.at("mutation").get<std::string>());
    if (!mk) throw SchemaError("corpus line " + std::to_string(lineno) + ": bad mutation");
    r.mutation = *mk;
    r.seed = j.at("seed").get<uint64_t>();
    out.push_back(std::move(r));
  }
  return out;
}

LabeledRecord label_record(const toylang::CorpusRecord& rec, size_t p_max) {
  LabeledRecord lr;
  lr.rec = rec;
  lr.labels = editlabel::to_repair_labels(editlabel::edit_script(rec.buggy, rec.fixed),
                                          rec.buggy, rec.fixed);
  auto ast = toylang::parse(rec.fixed);
  auto pr = depmat::nca_matrix(ast, p_max);
  lr.dep = depmat::to_sparse(pr.first);
  return lr;
}

void label_corpus(const std::string& corpus_path, const std::string& out_path, int threads,
                  size_t p_max) {
  auto records = load_corpus(corpus_path);
  std::vector<std::string> lines(records.size());
  auto work = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i)
      lines[i] = record_to_json(label_record(records[i], p_max)).dump();
  };
  if (threads <= 1 || records.size() < 2) {
    work(0, records.size());
  } else {
    const size_t nt = std::min<size_t>(static_cast<size_t>(threads), records.size());
    std::vector<std::thread> pool;
    const size_t chunk = (records.size() + nt - 1) / nt;
    for (size_t t = 0; t < nt; ++t)
      pool.emplace_back(work, t * chunk, std::min(records.size(), (t + 1) * chunk));
    for (auto& th : pool) th.join();
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw SchemaError("cannot open " + out_path + " for writing");
  for (const auto& l : lines) out << l << "\n";
  toylang::build_vocab().save(toylang::vocab_path_for(out_path));
}

std::vector<LabeledRecord> load_labeled(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open labeled corpus " + path);
  std::vector<LabeledRecord> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw SchemaError("labeled line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// --- training --------------------------------------------------------------

namespace {

struct SampleLoss {
  double total, dec, act, len, depend;
  Tensor total_t;
};

}  // namespace

std::vector<json> train(const TrainOptions& opt, const std::string& labeled_path,
                        const std::string& out_ckpt) {
  auto records = load_labeled(labeled_path);
  if (records.empty()) throw SchemaError("labeled corpus is empty");
  toylang::Vocab vocab;
  {
    const std::string vp = toylang::vocab_path_for(labeled_path);
    std::ifstream probe(vp);
    vocab = probe ? toylang::Vocab::load(vp) : toylang::build_vocab();
  }

  model::ModelConfig cfg = opt.config;
  cfg.vocab_size = static_cast<int>(vocab.size());
  cfg.validate();

  const int bs = std::max(1, opt.batch_size);
  const long steps_per_epoch =
      static_cast<long>((records.size() + static_cast<size_t>(bs) - 1) / static_cast<size_t>(bs));
  nn::LrSchedule sched{opt.peak_lr, opt.warmup_steps, opt.epochs * steps_per_epoch};
  nn::AdamState adam;

  std::unique_ptr<model::NarModel> nar;
  std::unique_ptr<model::ArModel> ar;
  nn::ParamGroup* params;
  std::mt19937_64* drop_rng;
  if (cfg.arch == "nar") {
    nar = std::make_unique<model::NarModel>(cfg, mix64(opt.seed, 0xA11CE));
    params = &nar->params;
    drop_rng = &nar->drop_rng;
    nar->train_mode = true;
  } else {
    ar = std::make_unique<model::ArModel>(cfg, mix64(opt.seed, 0xA11CE));
    params = &ar->params;
    drop_rng = &ar->drop_rng;
    ar->train_mode = true;
  }

  int start_epoch = 0;
  if (!opt.resume.empty()) {
    auto meta = nn::load_checkpoint(opt.resume, *params, &adam);
    start_epoch = meta.config.value("epochs_done", 0);
  }

  auto sample_loss = [&](const LabeledRecord& lr) -> SampleLoss {
    const auto ids_b = vocab.encode(lr.rec.buggy);
    const auto ids_f = vocab.encode(lr.rec.fixed);
    SampleLoss s{};
    if (cfg.arch == "nar") {
      auto fwd = nar->forward(ids_b, lr.labels.actions, lr.labels.lengths);
      auto l = nar->compute_losses(fwd, lr.labels.actions, lr.labels.lengths, lr.dense_dep(),
                                   ids_f);
      s = {l.total.item(), l.dec.item(), l.act.item(), l.len.item(), l.depend.item(), l.total};
    } else {
      Tensor enc = ar->encode(ids_b);
      Tensor logits = ar->teacher_logits(enc, ids_f);
      std::vector<int> targets(ids_f);
      targets.push_back(toylang::kEosId);
      Tensor dec = nn::cross_entropy_rows(logits, targets, -1);
      s = {dec.item(), dec.item(), 0.0, 0.0, 0.0, dec};
    }
    return s;
  };

  std::vector<json> logs;
  long global_step = adam.step_count;
  for (int epoch = start_epoch; epoch < opt.epochs; ++epoch) {
    std::vector<size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix64(opt.seed, 1000 + static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    drop_rng->seed(mix64(opt.seed, 2000 + static_cast<uint64_t>(epoch)));

    double sum_total = 0, sum_dec = 0, sum_act = 0, sum_len = 0, sum_dep = 0;
    long counted = 0;
    double lr = 0.0;
    for (size_t b = 0; b < order.size(); b += static_cast<size_t>(bs)) {
      const size_t bend = std::min(order.size(), b + static_cast<size_t>(bs));
      params->zero_grad();
      int in_batch = 0;
      for (size_t x = b; x < bend; ++x) {
        const auto& lr_rec = records[order[x]];
        const size_t m = lr_rec.rec.fixed.size();
        if (lr_rec.rec.buggy.empty() || m == 0 ||
            lr_rec.rec.buggy.size() > static_cast<size_t>(cfg.max_seq_len) ||
            m + 1 > static_cast<size_t>(cfg.max_seq_len))
          continue;  // oversized or degenerate records are skipped
        SampleLoss s = sample_loss(lr_rec);
        if (!std::isfinite(s.total))
          throw DivergedError("non-finite loss at epoch " + std::to_string(epoch));
        nn::backward(nn::scale(s.total_t, 1.0 / static_cast<double>(bend - b)));
        sum_total += s.total;
        sum_dec += s.dec;
        sum_act += s.act;
        sum_len += s.len;
        sum_dep += s.depend;
        ++counted;
        ++in_batch;
      }
      lr = sched.at(global_step);
      if (in_batch > 0) adam.step(*params, lr);
      ++global_step;
    }
    const double denom = counted > 0 ? static_cast<double>(counted) : 1.0;
    json line{{"epoch", epoch},
              {"L_total", sum_total / denom},
              {"L_dec", sum_dec / denom},
              {"L_act", sum_act / denom},
              {"L_len", sum_len / denom},
              {"L_depend", sum_dep / denom},
              {"lr", lr}};
    logs.push_back(line);

    nn::Checkpoint meta;
    meta.config = cfg.to_json();
    meta.config["epochs_done"] = epoch + 1;
    meta.vocab = vocab.tokens();
    meta.precision = opt.precision;
    nn::save_checkpoint(out_ckpt, meta, *params, &adam);
  }
  if (logs.empty()) {
    // zero remaining epochs (e.g. resume at the end): still write a checkpoint
    nn::Checkpoint meta;
    meta.config = cfg.to_json();
    meta.config["epochs_done"] = start_epoch;
    meta.vocab = vocab.tokens();
    meta.precision = opt.precision;
    nn::save_checkpoint(out_ckpt, meta, *params, &adam);
  }
  return logs;
}

namespace {

nn::Checkpoint load_into(const std::string& path, nn::ParamGroup& fresh) {
  nn::ParamGroup raw;
  nn::Checkpoint meta = nn::load_checkpoint(path, raw);
  for (auto& [name, t] : fresh.all()) {
    if (!raw.has(name))
      throw SchemaError("checkpoint " + path + " is missing parameter " + name);
    Tensor& src = raw.get(name);
    if (src.shape() != t.shape())
      throw SchemaError("checkpoint shape mismatch for " + name);
    t.node->val = src.val();
  }
  return meta;
}

}  // namespace

model::NarModel load_nar(const std::string& ckpt_path, toylang::Vocab& vocab_out) {
  nn::ParamGroup raw;
  nn::Checkpoint meta = nn::load_checkpoint(ckpt_path, raw);
  auto cfg = model::ModelConfig::from_json(meta.config);
  if (cfg.arch != "nar") throw SchemaError(ckpt_path + " holds an ar checkpoint");
  model::NarModel m(cfg, 0);
  load_into(ckpt_path, m.params);
  vocab_out = toylang::Vocab(meta.vocab);
  m.train_mode = false;
  return m;
}

model::ArModel load_ar(const std::string& ckpt_path, toylang::Vocab& vocab_out) {
  nn::ParamGroup raw;
  nn::Checkpoint meta = nn::load_checkpoint(ckpt_path, raw);
  auto cfg = model::ModelConfig::from_json(meta.config);
  if (cfg.arch != "ar") throw SchemaError(ckpt_path + " holds a nar checkpoint");
  model::ArModel m(cfg, 0);
  load_into(ckpt_path, m.params);
  vocab_out = toylang::Vocab(meta.vocab);
  m.train_mode = false;
  return m;
}

// --- inference -------------------------------------------------------------

json PatchCandidate::to_json() const {
  return json{{"tokens", tokens},       {"score", score},
              {"token_lp", token_lp},   {"action_lp", action_lp},
              {"length_lp", length_lp}, {"variant", variant_id},
              {"seed", sample_seed}};
}

std::vector<PatchCandidate> repair(model::NarModel& m, const toylang::Vocab& vocab,
                                   const std::vector<std::string>& buggy, int k,
                                   uint64_t seed) {
  if (k < 1) k = 1;
  nn::NoGradGuard ng;
  const bool was_training = m.train_mode;
  m.train_mode = false;

  const auto ids = vocab.encode(buggy);
  const int n = static_cast<int>(ids.size());
  const int lmax = m.cfg.max_repair_len;
  Tensor enc = m.encode(ids);
  auto [act_logits, len_logits] = m.predict_repair(enc);

  std::vector<std::vector<double>> act_lsm(static_cast<size_t>(n));
  std::vector<std::vector<double>> len_lsm(static_cast<size_t>(n));
  std::vector<editlabel::RepairAction> actions(static_cast<size_t>(n),
                                               editlabel::RepairAction::Keep);
  std::vector<int> base_len(static_cast<size_t>(n), 1);
  for (int i = 0; i < n; ++i) {
    len_lsm[static_cast<size_t>(i)] = lsm_row(len_logits.val(), i, lmax);
    if (m.cfg.use_action_predictor) {
      act_lsm[static_cast<size_t>(i)] = lsm_row(act_logits.val(), i, 4);
      actions[static_cast<size_t>(i)] =
          static_cast<editlabel::RepairAction>(argmax_of(act_lsm[static_cast<size_t>(i)]));
      // Length coherence with the predicted action.
      switch (actions[static_cast<size_t>(i)]) {
        case editlabel::RepairAction::Keep:
        case editlabel::RepairAction::Replace:
          base_len[static_cast<size_t>(i)] = 1;
          break;
        case editlabel::RepairAction::Delete:
          base_len[static_cast<size_t>(i)] = 0;
          break;
        case editlabel::RepairAction::Insert: {
          int best = 2;
          const auto& row = len_lsm[static_cast<size_t>(i)];
          for (int c = 3; c < lmax; ++c)
            if (row[static_cast<size_t>(c)] > row[static_cast<size_t>(best)]) best = c;
          base_len[static_cast<size_t>(i)] = best;
          break;
        }
      }
    } else {
      base_len[static_cast<size_t>(i)] = argmax_of(len_lsm[static_cast<size_t>(i)]);
    }
  }

  // The q least-certain length positions form the length beam (2^q variants).
  // The explored pool is fixed (sized for the default k of 16) so that the
  // ranking is independent of the requested k: the k=1 answer is always the
  // top of the k=16 list.
  constexpr int kBeamCandidates = 16;
  int q = 0;
  while ((1 << q) < kBeamCandidates) ++q;
  q = std::min(q, n);
  std::vector<int> by_margin(static_cast<size_t>(n));
  std::iota(by_margin.begin(), by_margin.end(), 0);
  std::vector<double> margin(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& row = len_lsm[static_cast<size_t>(i)];
    margin[static_cast<size_t>(i)] = row[static_cast<size_t>(argmax_of(row))] -
                                     row[static_cast<size_t>(second_best_of(row))];
  }
  std::stable_sort(by_margin.begin(), by_margin.end(),
                   [&](int a, int b) { return margin[static_cast<size_t>(a)] < margin[static_cast<size_t>(b)]; });
  std::vector<int> beam_pos(by_margin.begin(), by_margin.begin() + q);

  struct Raw {
    std::vector<int> tokens;
    double token_lp, action_lp, length_lp;
    int variant;
  };
  std::vector<Raw> pool;
  int variant_id = 0;

  auto action_lp_total = [&]() {
    double s = 0.0;
    if (m.cfg.use_action_predictor)
      for (int i = 0; i < n; ++i)
        s += act_lsm[static_cast<size_t>(i)]
                    [static_cast<size_t>(static_cast<int>(actions[static_cast<size_t>(i)]))];
    return s;
  }();

  for (int mask = 0; mask < (1 << q); ++mask) {
    std::vector<int> lens = base_len;
    for (int b = 0; b < q; ++b)
      if (mask & (1 << b)) {
        const int pos = beam_pos[static_cast<size_t>(b)];
        lens[static_cast<size_t>(pos)] = second_best_of(len_lsm[static_cast<size_t>(pos)]);
      }
    long total = std::accumulate(lens.begin(), lens.end(), 0L);
    if (total == 0 || total > m.cfg.max_seq_len) {
      ++variant_id;
      continue;  // fully deleted or oversized variant is skipped
    }

    double length_lp = 0.0;
    for (int i = 0; i < n; ++i)
      length_lp += len_lsm[static_cast<size_t>(i)]
                          [static_cast<size_t>(std::min(lens[static_cast<size_t>(i)], lmax - 1))];

    auto [d0, map] = m.expand_to_target(enc, lens);
    auto [dep, fused] = m.extract_and_fuse(d0);
    auto trace = m.decode_two_stage(fused, enc, ids, actions, map);
    const int mm = map.size();
    const int v = m.cfg.vocab_size;

    std::vector<std::vector<double>> tok_lsm(static_cast<size_t>(mm));
    for (int p = 0; p < mm; ++p)
      tok_lsm[static_cast<size_t>(p)] =
          trace.retained[static_cast<size_t>(p)] || !m.cfg.use_two_stage
              ? lsm_row(trace.logits_first.val(), p, v)
              : lsm_row(trace.logits_second.val(), p, v);

    auto score_tokens = [&](const std::vector<int>& toks) {
      double s = 0.0;
      for (int p = 0; p < mm; ++p)
        s += tok_lsm[static_cast<size_t>(p)][static_cast<size_t>(toks[static_cast<size_t>(p)])];
      return s;
    };

    pool.push_back({trace.final_tokens, score_tokens(trace.final_tokens), action_lp_total,
                    length_lp, variant_id});
    ++variant_id;

    // Token-level diversity: flip each re-generated position to its runner-up.
    for (int p = 0; p < mm && static_cast<int>(pool.size()) < 4 * kBeamCandidates; ++p) {
      if (trace.retained[static_cast<size_t>(p)]) continue;
      const int s = map.source[static_cast<size_t>(p)];
      if (m.cfg.use_action_predictor &&
          actions[static_cast<size_t>(s)] == editlabel::RepairAction::Keep &&
          map.offset[static_cast<size_t>(p)] == 0)
        continue;  // hard-copied position, token is forced
      std::vector<int> toks = trace.final_tokens;
      toks[static_cast<size_t>(p)] = second_best_of(tok_lsm[static_cast<size_t>(p)]);
      pool.push_back({std::move(toks), 0.0, action_lp_total, length_lp, variant_id});
      pool.back().token_lp = score_tokens(pool.back().tokens);
      ++variant_id;
    }
  }

  // Deduplicate by token sequence, keeping the best-scored occurrence.
  std::map<std::vector<int>, size_t> best;
  std::vector<PatchCandidate> out;
  auto total_of = [](const Raw& r) { return r.token_lp + r.action_lp + r.length_lp; };
  std::vector<const Raw*> unique;
  for (const auto& r : pool) {
    auto it = best.find(r.tokens);
    if (it == best.end()) {
      best[r.tokens] = unique.size();
      unique.push_back(&r);
    } else if (total_of(r) > total_of(*unique[it->second])) {
      unique[it->second] = &r;
    }
  }
  std::vector<const Raw*> ranked = unique;
  std::sort(ranked.begin(), ranked.end(), [&](const Raw* a, const Raw* b) {
    const double sa = total_of(*a), sb = total_of(*b);
    if (sa != sb) return sa > sb;
    return a->variant < b->variant;
  });
  if (static_cast<int>(ranked.size()) > k) ranked.resize(static_cast<size_t>(k));
  for (const Raw* r : ranked) {
    PatchCandidate c;
    c.tokens = vocab.decode(r->tokens);
    c.token_lp = r->token_lp;
    c.action_lp = r->action_lp;
    c.length_lp = r->length_lp;
    c.score = total_of(*r);
    c.variant_id = r->variant;
    c.sample_seed = seed;
    out.push_back(std::move(c));
  }
  m.train_mode = was_training;
  return out;
}

bool validate_patch(const std::vector<std::string>& candidate,
                    const std::vector<std::string>& reference) {
  return candidate == reference;
}

// --- benchmark -------------------------------------------------------------

json BenchReport::to_json() const {
  json arr = json::array();
  for (const auto& r : rows)
    arr.push_back({{"m", r.m},
                   {"nar_passes", r.nar_passes},
                   {"ar_passes", r.ar_passes},
                   {"nar_ms", r.nar_ms},
                   {"ar_ms", r.ar_ms},
                   {"ratio", r.ratio}});
  return arr;
}

BenchReport bench_latency(model::NarModel& nar, model::ArModel& ar,
                          const std::vector<int>& lengths, int trials) {
  if (nar.cfg.d_model != ar.cfg.d_model || nar.cfg.heads != ar.cfg.heads ||
      nar.cfg.enc_layers != ar.cfg.enc_layers || nar.cfg.dec_layers != ar.cfg.dec_layers ||
      nar.cfg.vocab_size != ar.cfg.vocab_size)
    throw model::ConfigError("nar and ar checkpoints disagree on layer/width config");
  if (trials < 5) trials = 5;
  nn::NoGradGuard ng;
  nar.train_mode = false;
  ar.train_mode = false;

  BenchReport report;
  for (int m : lengths) {
    if (m < 1 || m > nar.cfg.max_seq_len || m + 1 > ar.cfg.max_seq_len)
      throw model::CapacityError("benchmark length " + std::to_string(m) +
                                 " exceeds max_seq_len");
    std::vector<int> ids(static_cast<size_t>(m));
    const int usable = std::max(1, nar.cfg.vocab_size - 5);
    for (int i = 0; i < m; ++i) ids[static_cast<size_t>(i)] = 5 + (i % usable);
    const std::vector<int> ones(static_cast<size_t>(m), 1);
    const std::vector<editlabel::RepairAction> keeps(static_cast<size_t>(m),
                                                     editlabel::RepairAction::Keep);

    int nar_passes = 0;
    auto run_nar = [&]() {
      Tensor enc = nar.encode(ids);
      (void)nar.predict_repair(enc);
      auto [d0, map] = nar.expand_to_target(enc, ones);
      auto [dep, fused] = nar.extract_and_fuse(d0);
      auto trace = nar.decode_two_stage(fused, enc, ids, keeps, map);
      nar_passes = trace.decoder_passes;
    };
    int ar_passes = 0;
    auto run_ar = [&]() {
      Tensor enc = ar.encode(ids);
      (void)ar.decode_greedy(enc, m, m, &ar_passes);
    };

    run_nar();  // warmup, excluded from timing
    run_ar();
    std::vector<double> nar_ms, ar_ms;
    for (int t = 0; t < trials; ++t) {
      auto t0 = std::chrono::steady_clock::now();
      run_nar();
      auto t1 = std::chrono::steady_clock::now();
      run_ar();
      auto t2 = std::chrono::steady_clock::now();
      nar_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      ar_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
    }
    BenchRow row;
    row.m = m;
    row.nar_passes = nar_passes;
    row.ar_passes = ar_passes;
    row.nar_ms = median(nar_ms);
    row.ar_ms = median(ar_ms);
    row.ratio = row.nar_ms > 0.0 ? row.ar_ms / row.nar_ms : 0.0;
    report.rows.push_back(row);
  }
  return report;
}

// --- evaluation ------------------------------------------------------------

namespace {
int bucket_of(int n) {
  if (n <= 10) return 0;
  if (n <= 20) return 1;
  if (n <= 50) return 2;
  return 3;
}
const char* kBucketNames[4] = {"N<=10", "10<N<=20", "20<N<=50", "N>50"};
}  // namespace

std::string EvalTable::to_csv() const {
  std::ostringstream os;
  os << "bucket,action_acc,length_acc\n";
  long tok = 0, ah = 0, lh = 0;
  for (const auto& b : buckets) {
    os << b.name << ",";
    if (b.tokens == 0) {
      os << "n/a,n/a\n";
    } else {
      os << static_cast<double>(b.action_hits) / b.tokens << ","
         << static_cast<double>(b.length_hits) / b.tokens << "\n";
    }
    tok += b.tokens;
    ah += b.action_hits;
    lh += b.length_hits;
  }
  os << "average,";
  if (tok == 0)
    os << "n/a,n/a\n";
  else
    os << static_cast<double>(ah) / tok << "," << static_cast<double>(lh) / tok << "\n";
  return os.str();
}

double EvalTable::average_action_acc() const {
  long tok = 0, ah = 0;
  for (const auto& b : buckets) {
    tok += b.tokens;
    ah += b.action_hits;
  }
  return tok > 0 ? static_cast<double>(ah) / tok : 0.0;
}

double EvalTable::average_length_acc() const {
  long tok = 0, lh = 0;
  for (const auto& b : buckets) {
    tok += b.tokens;
    lh += b.length_hits;
  }
  return tok > 0 ? static_cast<double>(lh) / tok : 0.0;
}

EvalTable eval_with(const std::vector<LabeledRecord>& records, const PredictFn& pred) {
  EvalTable table;
  for (int i = 0; i < 4; ++i) table.buckets.push_back({kBucketNames[i], 0, 0, 0});
  for (const auto& lr : records) {
    auto [pa, pl] = pred(lr);
    if (pa.size() != lr.rec.buggy.size() || pl.size() != lr.rec.buggy.size())
      throw SchemaError("prediction arity mismatch in eval");
    EvalBucket& b = table.buckets[static_cast<size_t>(bucket_of(lr.edited_count()))];
    for (size_t i = 0; i < lr.rec.buggy.size(); ++i) {
      ++b.tokens;
      if (pa[i] == lr.labels.actions[i]) ++b.action_hits;
      if (pl[i] == lr.labels.lengths[i]) ++b.length_hits;
    }
  }
  return table;
}

EvalTable eval_predictor(model::NarModel& m, const toylang::Vocab& vocab,
                         const std::vector<LabeledRecord>& records) {
  nn::NoGradGuard ng;
  const bool was_training = m.train_mode;
  m.train_mode = false;
  auto table = eval_with(records, [&](const LabeledRecord& lr) {
    const auto ids = vocab.encode(lr.rec.buggy);
    Tensor enc = m.encode(ids);
    auto [act_logits, len_logits] = m.predict_repair(enc);
    const int n = static_cast<int>(ids.size());
    std::vector<editlabel::RepairAction> pa(static_cast<size_t>(n),
                                            editlabel::RepairAction::Keep);
    std::vector<int> pl(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      if (m.cfg.use_action_predictor)
        pa[static_cast<size_t>(i)] = static_cast<editlabel::RepairAction>(
            argmax_of(lsm_row(act_logits.val(), i, 4)));
      pl[static_cast<size_t>(i)] =
          argmax_of(lsm_row(len_logits.val(), i, m.cfg.max_repair_len));
    }
    return std::make_pair(pa, pl);
  });
  m.train_mode = was_training;
  return table;
}

double count_overcorrections(const std::vector<std::vector<std::string>>& candidates,
                             const std::vector<std::string>& buggy,
                             const editlabel::RepairLabels& labels) {
  if (candidates.empty()) return 0.0;
  std::vector<size_t> offset(labels.lengths.size(), 0);
  size_t pos = 0;
  for (size_t i = 0; i < labels.lengths.size(); ++i) {
    offset[i] = pos;
    pos += static_cast<size_t>(labels.lengths[i]);
  }
  double total = 0.0;
  for (const auto& cand : candidates) {
    long n = 0;
    for (size_t i = 0; i < labels.actions.size(); ++i) {
      if (labels.actions[i] != editlabel::RepairAction::Keep) continue;
      const size_t p = offset[i];
      if (p >= cand.size() || cand[p] != buggy[i]) ++n;
    }
    total += static_cast<double>(n);
  }
  return total / static_cast<double>(candidates.size());
}

// --- similarity analysis ---------------------------------------------------

SimilarityReport analyze_similarity(model::NarModel& m, const toylang::Vocab& vocab,
                                    const std::vector<std::string>& fixed_tokens) {
  if (!m.cfg.use_dependency_extractor)
    throw model::ConfigError("similarity analysis needs the dependency extractor");
  nn::NoGradGuard ng;
  const bool was_training = m.train_mode;
  m.train_mode = false;

  auto ast = toylang::parse(fixed_tokens);
  auto table = depmat::nca_matrix(ast, static_cast<size_t>(m.cfg.p_max)).second;
  const auto ids = vocab.encode(fixed_tokens);
  const int n = static_cast<int>(ids.size());

  Tensor enc = m.encode(ids);
  const std::vector<int> ones(static_cast<size_t>(n), 1);
  auto [d0, map] = m.expand_to_target(enc, ones);
  Tensor q = nn::matmul(d0, m.params.get("dep.wq"));
  Tensor kk = nn::matmul(d0, m.params.get("dep.wk"));
  const int d = m.cfg.d_model;

  // Token feature i = Q_i ⊙ K_i, the self-pair feature the class embeddings
  // are trained against on the matrix diagonal.
  std::vector<std::vector<double>> feat(static_cast<size_t>(n),
                                        std::vector<double>(static_cast<size_t>(d)));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      feat[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          q.val()[static_cast<size_t>(i) * d + j] * kk.val()[static_cast<size_t>(i) * d + j];

  const Tensor& cls = m.params.get("dep.cls");  // [d, p_max]
  auto cls_col = [&](int c) {
    std::vector<double> v(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j)
      v[static_cast<size_t>(j)] = cls.val()[static_cast<size_t>(j) * m.cfg.p_max + c];
    return v;
  };

  // Tree distance in edges between an internal node and a token's leaf.
  auto depth = [&](int node) { return ast.depth_of(node); };
  auto tree_dist = [&](int a, int b) {
    int da = depth(a), db = depth(b);
    int x = a, y = b;
    while (da > db) {
      x = ast.nodes[static_cast<size_t>(x)].parent;
      --da;
    }
    while (db > da) {
      y = ast.nodes[static_cast<size_t>(y)].parent;
      --db;
    }
    while (x != y) {
      x = ast.nodes[static_cast<size_t>(x)].parent;
      y = ast.nodes[static_cast<size_t>(y)].parent;
    }
    return depth(a) + depth(b) - 2 * depth(x);
  };

  std::ostringstream os;
  os << "node";
  for (const auto& t : fixed_tokens) os << "," << t;
  os << "\n";
  std::map<int, std::pair<double, long>> acc;  // distance bucket -> (sum, count)
  for (size_t c = 0; c < table.size(); ++c) {
    const int node = table.node_indices[c];
    const auto cv = cls_col(static_cast<int>(c));
    os << ast.nodes[static_cast<size_t>(node)].label << "#" << c;
    for (int i = 0; i < n; ++i) {
      const double cos = cosine(cv, feat[static_cast<size_t>(i)]);
      os << "," << cos;
      const int leaf = ast.leaves[static_cast<size_t>(i)];
      int dist = tree_dist(node, leaf);
      if (dist > 4) dist = 4;  // bucket 4 collects all longer paths
      auto& slot = acc[dist];
      slot.first += cos;
      slot.second += 1;
    }
    os << "\n";
  }
  os << "\ndistance,mean_cosine\n";
  SimilarityReport rep;
  for (const auto& [dist, sc] : acc) {
    const double mean = sc.second > 0 ? sc.first / static_cast<double>(sc.second) : 0.0;
    rep.bucket_mean[dist] = mean;
    os << dist << "," << mean << "\n";
  }
  rep.csv = os.str();
  m.train_mode = was_training;
  return rep;
}

}  // namespace narfix::pipeline
