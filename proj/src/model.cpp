#include "narfix/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "narfix/toylang.hpp"

namespace narfix::model {

using nn::Tensor;
using json = nlohmann::json;

// --- config ----------------------------------------------------------------

void ModelConfig::validate() const {
  if (arch != "nar" && arch != "ar") throw ConfigError("arch must be nar or ar");
  if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
  if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
    throw ConfigError("d_model must be a positive multiple of heads");
  if (enc_layers < 1 || dec_layers < 1) throw ConfigError("need at least one layer per stack");
  if (split_k < 1 || split_k >= dec_layers)
    throw ConfigError("split_k must satisfy 1 <= split_k < dec_layers");
  if (ffn_mult < 1) throw ConfigError("ffn_mult must be >= 1");
  if (max_repair_len < 2) throw ConfigError("max_repair_len must be >= 2");
  if (max_seq_len < 1 || p_max < 1) throw ConfigError("capacities must be positive");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
}

json ModelConfig::to_json() const {
  return json{{"arch", arch},
              {"vocab_size", vocab_size},
              {"d_model", d_model},
              {"heads", heads},
              {"enc_layers", enc_layers},
              {"dec_layers", dec_layers},
              {"split_k", split_k},
              {"ffn_mult", ffn_mult},
              {"max_repair_len", max_repair_len},
              {"max_seq_len", max_seq_len},
              {"p_max", p_max},
              {"tau", tau},
              {"alpha", alpha},
              {"lambda", lambda},
              {"dropout", dropout},
              {"use_action_predictor", use_action_predictor},
              {"use_dependency_extractor", use_dependency_extractor},
              {"use_two_stage", use_two_stage}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.arch = j.value("arch", c.arch);
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.split_k = j.value("split_k", c.split_k);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.max_repair_len = j.value("max_repair_len", c.max_repair_len);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.p_max = j.value("p_max", c.p_max);
  c.tau = j.value("tau", c.tau);
  c.alpha = j.value("alpha", c.alpha);
  c.lambda = j.value("lambda", c.lambda);
  c.dropout = j.value("dropout", c.dropout);
  c.use_action_predictor = j.value("use_action_predictor", c.use_action_predictor);
  c.use_dependency_extractor = j.value("use_dependency_extractor", c.use_dependency_extractor);
  c.use_two_stage = j.value("use_two_stage", c.use_two_stage);
  c.validate();
  return c;
}

// --- shared building blocks ------------------------------------------------

namespace {

Tensor ones_param(int d) {
  return Tensor::from({d}, std::vector<double>(static_cast<size_t>(d), 1.0), true);
}

void add_ln(nn::ParamGroup& p, const std::string& prefix, int d) {
  p.add(prefix + ".g", ones_param(d));
  p.add(prefix + ".b", nn::zeros_param({d}));
}

void add_attn(nn::ParamGroup& p, const std::string& prefix, int d, std::mt19937_64& rng) {
  p.add(prefix + ".wq", nn::glorot(d, d, rng));
  p.add(prefix + ".wk", nn::glorot(d, d, rng));
  p.add(prefix + ".wv", nn::glorot(d, d, rng));
  p.add(prefix + ".wo", nn::glorot(d, d, rng));
  p.add(prefix + ".bo", nn::zeros_param({d}));
}

void add_ffn(nn::ParamGroup& p, const std::string& prefix, int d, int hid,
             std::mt19937_64& rng) {
  p.add(prefix + ".w1", nn::glorot(d, hid, rng));
  p.add(prefix + ".b1", nn::zeros_param({hid}));
  p.add(prefix + ".w2", nn::glorot(hid, d, rng));
  p.add(prefix + ".b2", nn::zeros_param({d}));
}

Tensor ln_f(nn::ParamGroup& p, const Tensor& x, const std::string& prefix) {
  return nn::layer_norm(x, p.get(prefix + ".g"), p.get(prefix + ".b"));
}

Tensor ffn_f(nn::ParamGroup& p, const Tensor& x, const std::string& prefix) {
  Tensor h = nn::relu(nn::add_rowvec(nn::matmul(x, p.get(prefix + ".w1")),
                                     p.get(prefix + ".b1")));
  return nn::add_rowvec(nn::matmul(h, p.get(prefix + ".w2")), p.get(prefix + ".b2"));
}

Tensor mha_f(nn::ParamGroup& p, int heads, const Tensor& q_in, const Tensor& kv_in,
             const std::string& prefix, const std::vector<double>* add_mask) {
  const int d = q_in.cols();
  const int dh = d / heads;
  Tensor q = nn::matmul(q_in, p.get(prefix + ".wq"));
  Tensor k = nn::matmul(kv_in, p.get(prefix + ".wk"));
  Tensor v = nn::matmul(kv_in, p.get(prefix + ".wv"));
  std::vector<Tensor> per_head;
  per_head.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = nn::col_slice(q, h * dh, dh);
    Tensor kh = nn::col_slice(k, h * dh, dh);
    Tensor vh = nn::col_slice(v, h * dh, dh);
    Tensor scores = nn::scale(nn::matmul(qh, nn::transpose(kh)),
                              1.0 / std::sqrt(static_cast<double>(dh)));
    if (add_mask) scores = nn::add_const(scores, *add_mask);
    per_head.push_back(nn::matmul(nn::softmax_rows(scores), vh));
  }
  Tensor merged = nn::concat_cols(per_head);
  return nn::add_rowvec(nn::matmul(merged, p.get(prefix + ".wo")), p.get(prefix + ".bo"));
}

// Additive attention mask blocking [PAD] keys; empty when no pad is present.
std::vector<double> pad_mask(const std::vector<int>& ids) {
  const int n = static_cast<int>(ids.size());
  bool any = false;
  for (int id : ids) any = any || id == toylang::kPadId;
  if (!any) return {};
  std::vector<double> m(static_cast<size_t>(n) * static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (ids[static_cast<size_t>(j)] == toylang::kPadId)
        m[static_cast<size_t>(i) * n + j] = -1e9;
  return m;
}

std::vector<double> causal_mask(int t) {
  std::vector<double> m(static_cast<size_t>(t) * static_cast<size_t>(t), 0.0);
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) m[static_cast<size_t>(i) * t + j] = -1e9;
  return m;
}

std::vector<int> iota_ids(size_t n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

int argmax_row(const std::vector<double>& val, int row, int cols) {
  const double* r = val.data() + static_cast<size_t>(row) * cols;
  return static_cast<int>(std::max_element(r, r + cols) - r);
}

double maxprob_row(const std::vector<double>& val, int row, int cols) {
  const double* r = val.data() + static_cast<size_t>(row) * cols;
  const double mx = *std::max_element(r, r + cols);
  double z = 0.0;
  for (int j = 0; j < cols; ++j) z += std::exp(r[j] - mx);
  return 1.0 / z;  // exp(mx - mx) / z
}

}  // namespace

// --- NarModel --------------------------------------------------------------

NarModel::NarModel(ModelConfig config, uint64_t init_seed) : cfg(std::move(config)) {
  cfg.validate();
  init_params(init_seed);
}

void NarModel::init_params(uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int d = cfg.d_model, hid = cfg.ffn_mult * cfg.d_model;
  params.add("emb.tok", nn::glorot(cfg.vocab_size, d, rng));
  params.add("emb.pos", nn::glorot(cfg.max_seq_len, d, rng));
  params.add("emb.frag", nn::glorot(cfg.max_repair_len, d, rng));
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    add_ln(params, p + ".ln1", d);
    add_attn(params, p + ".attn", d, rng);
    add_ln(params, p + ".ln2", d);
    add_ffn(params, p + ".ffn", d, hid, rng);
  }
  add_ln(params, "enc.lnf", d);

  params.add("pred.conv.w", nn::glorot(3 * d, d, rng));
  params.add("pred.conv.b", nn::zeros_param({d}));
  if (cfg.use_action_predictor) {
    params.add("pred.act.w", nn::glorot(d, 4, rng));
    params.add("pred.act.b", nn::zeros_param({4}));
  }
  params.add("pred.len.w", nn::glorot(d, cfg.max_repair_len, rng));
  params.add("pred.len.b", nn::zeros_param({cfg.max_repair_len}));

  add_ln(params, "exp.ln1", d);
  add_attn(params, "exp.attn", d, rng);
  add_ln(params, "exp.ln2", d);
  add_ffn(params, "exp.ffn", d, hid, rng);

  if (cfg.use_dependency_extractor) {
    params.add("dep.wq", nn::glorot(d, d, rng));
    params.add("dep.wk", nn::glorot(d, d, rng));
    params.add("dep.wv", nn::glorot(d, d, rng));
    params.add("dep.cls", nn::glorot(d, cfg.p_max, rng));
  }

  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    add_ln(params, p + ".ln1", d);
    add_attn(params, p + ".self", d, rng);
    add_ln(params, p + ".ln2", d);
    add_attn(params, p + ".cross", d, rng);
    add_ln(params, p + ".ln3", d);
    add_ffn(params, p + ".ffn", d, hid, rng);
  }
  add_ln(params, "dec.lnf", d);
  params.add("out.w", nn::glorot(d, cfg.vocab_size, rng));
  params.add("out.b", nn::zeros_param({cfg.vocab_size}));
}

Tensor NarModel::drop(const Tensor& x) {
  return nn::dropout(x, cfg.dropout, drop_rng, train_mode);
}
Tensor NarModel::ln(const Tensor& x, const std::string& prefix) {
  return ln_f(params, x, prefix);
}
Tensor NarModel::ffn(const Tensor& x, const std::string& prefix) {
  return ffn_f(params, x, prefix);
}
Tensor NarModel::mha(const Tensor& q_in, const Tensor& kv_in, const std::string& prefix,
                     const std::vector<double>* add_mask) {
  return mha_f(params, cfg.heads, q_in, kv_in, prefix, add_mask);
}

Tensor NarModel::encode(const std::vector<int>& ids) {
  if (ids.empty()) throw CapacityError("cannot encode an empty token sequence");
  if (static_cast<int>(ids.size()) > cfg.max_seq_len)
    throw CapacityError("source length " + std::to_string(ids.size()) +
                        " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  Tensor x = nn::add(nn::embedding(params.get("emb.tok"), ids),
                     nn::embedding(params.get("emb.pos"), iota_ids(ids.size())));
  x = drop(x);
  const std::vector<double> mask = pad_mask(ids);
  const std::vector<double>* maskp = mask.empty() ? nullptr : &mask;
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    Tensor q = ln(x, p + ".ln1");
    x = nn::add(x, drop(mha(q, q, p + ".attn", maskp)));
    x = nn::add(x, drop(ffn(ln(x, p + ".ln2"), p + ".ffn")));
  }
  return ln(x, "enc.lnf");
}

std::pair<Tensor, Tensor> NarModel::predict_repair(const Tensor& enc) {
  Tensor h = nn::conv1d_same(enc, params.get("pred.conv.w"), params.get("pred.conv.b"), 3);
  h = drop(nn::relu(h));
  Tensor act;
  if (cfg.use_action_predictor)
    act = nn::add_rowvec(nn::matmul(h, params.get("pred.act.w")), params.get("pred.act.b"));
  Tensor len = nn::add_rowvec(nn::matmul(h, params.get("pred.len.w")),
                              params.get("pred.len.b"));
  return {act, len};
}

std::pair<Tensor, ExpansionMap> NarModel::expand_to_target(const Tensor& enc,
                                                           const std::vector<int>& lengths) {
  ExpansionMap map;
  for (size_t i = 0; i < lengths.size(); ++i) {
    for (int o = 0; o < lengths[i]; ++o) {
      map.source.push_back(static_cast<int>(i));
      map.offset.push_back(std::min(o, cfg.max_repair_len - 1));
    }
  }
  if (map.size() == 0) throw CapacityError("expansion produced an empty target");
  if (map.size() > cfg.max_seq_len)
    throw CapacityError("expanded target length " + std::to_string(map.size()) +
                        " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  Tensor d0 = nn::add(nn::row_gather(enc, map.source),
                      nn::embedding(params.get("emb.frag"), map.offset));
  Tensor x = nn::add(d0, drop(mha(ln(d0, "exp.ln1"), enc, "exp.attn", nullptr)));
  x = nn::add(x, drop(ffn(ln(x, "exp.ln2"), "exp.ffn")));
  return {x, map};
}

std::pair<Tensor, Tensor> NarModel::extract_and_fuse(const Tensor& dec_in) {
  if (!cfg.use_dependency_extractor) return {Tensor{}, dec_in};
  const int m = dec_in.rows();
  Tensor q = nn::matmul(dec_in, params.get("dep.wq"));
  Tensor k = nn::matmul(dec_in, params.get("dep.wk"));
  Tensor v = nn::matmul(dec_in, params.get("dep.wv"));

  std::vector<int> rep_i, rep_j;
  rep_i.reserve(static_cast<size_t>(m) * m);
  rep_j.reserve(static_cast<size_t>(m) * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      rep_i.push_back(i);
      rep_j.push_back(j);
    }
  Tensor pair_feat = nn::mul(nn::row_gather(q, rep_i), nn::row_gather(k, rep_j));
  Tensor dep_logits = nn::matmul(pair_feat, params.get("dep.cls"));

  Tensor scores = nn::scale(nn::matmul(q, nn::transpose(k)),
                            1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
  Tensor fused = nn::add(dec_in, nn::matmul(nn::softmax_rows(scores), v));
  return {dep_logits, fused};
}

Tensor NarModel::decoder_layer(const Tensor& x_in, const Tensor& enc,
                               const std::string& prefix) {
  Tensor q = ln(x_in, prefix + ".ln1");
  Tensor x = nn::add(x_in, drop(mha(q, q, prefix + ".self", nullptr)));
  x = nn::add(x, drop(mha(ln(x, prefix + ".ln2"), enc, prefix + ".cross", nullptr)));
  x = nn::add(x, drop(ffn(ln(x, prefix + ".ln3"), prefix + ".ffn")));
  return x;
}

Tensor NarModel::output_logits(const Tensor& x) {
  return nn::add_rowvec(nn::matmul(x, params.get("out.w")), params.get("out.b"));
}

DecodeTrace NarModel::decode_two_stage(const Tensor& fused, const Tensor& enc,
                                       const std::vector<int>& source_ids,
                                       const std::vector<editlabel::RepairAction>& actions,
                                       const ExpansionMap& map) {
  const int m = map.size();
  const int v = cfg.vocab_size;
  const int stage1_end = cfg.use_two_stage ? cfg.dec_layers - cfg.split_k : cfg.dec_layers;

  DecodeTrace tr;
  Tensor x = fused;
  for (int l = 0; l < stage1_end; ++l) x = decoder_layer(x, enc, "dec.l" + std::to_string(l));
  tr.logits_first = output_logits(ln(x, "dec.lnf"));

  tr.first_argmax.resize(static_cast<size_t>(m));
  tr.first_maxprob.resize(static_cast<size_t>(m));
  for (int p = 0; p < m; ++p) {
    tr.first_argmax[static_cast<size_t>(p)] = argmax_row(tr.logits_first.val(), p, v);
    tr.first_maxprob[static_cast<size_t>(p)] = maxprob_row(tr.logits_first.val(), p, v);
  }

  tr.retained.assign(static_cast<size_t>(m), 1);
  if (cfg.use_two_stage) {
    std::vector<char> masked(static_cast<size_t>(m), 0);
    for (int p = 0; p < m; ++p) {
      bool consistent = true;
      if (cfg.use_action_predictor) {
        const int s = map.source[static_cast<size_t>(p)];
        const int pred = tr.first_argmax[static_cast<size_t>(p)];
        const auto act = actions[static_cast<size_t>(s)];
        if (act == editlabel::RepairAction::Keep)
          consistent = pred == source_ids[static_cast<size_t>(s)];
        else if (act == editlabel::RepairAction::Replace &&
                 map.offset[static_cast<size_t>(p)] == 0)
          consistent = pred != source_ids[static_cast<size_t>(s)];
      }
      const bool keep = consistent && tr.first_maxprob[static_cast<size_t>(p)] > cfg.tau;
      tr.retained[static_cast<size_t>(p)] = keep ? 1 : 0;
      masked[static_cast<size_t>(p)] = keep ? 0 : 1;
    }
    Tensor mask_row = nn::embedding(params.get("emb.tok"), {toylang::kMaskId});
    Tensor x2 = nn::replace_rows(x, masked, mask_row);
    for (int l = stage1_end; l < cfg.dec_layers; ++l)
      x2 = decoder_layer(x2, enc, "dec.l" + std::to_string(l));
    tr.logits_second = output_logits(ln(x2, "dec.lnf"));
    tr.decoder_passes = 2;
  } else {
    tr.decoder_passes = 1;
  }

  tr.final_tokens.resize(static_cast<size_t>(m));
  for (int p = 0; p < m; ++p) {
    int tok = tr.retained[static_cast<size_t>(p)]
                  ? tr.first_argmax[static_cast<size_t>(p)]
                  : argmax_row(tr.logits_second.val(), p, v);
    if (cfg.use_action_predictor) {
      const int s = map.source[static_cast<size_t>(p)];
      if (actions[static_cast<size_t>(s)] == editlabel::RepairAction::Keep &&
          map.offset[static_cast<size_t>(p)] == 0)
        tok = source_ids[static_cast<size_t>(s)];  // hard copy for kept tokens
    }
    tr.final_tokens[static_cast<size_t>(p)] = tok;
  }
  return tr;
}

ForwardOut NarModel::forward(const std::vector<int>& source_ids,
                             const std::vector<editlabel::RepairAction>& actions,
                             const std::vector<int>& lengths) {
  ForwardOut out;
  Tensor enc = encode(source_ids);
  auto [act, len] = predict_repair(enc);
  out.act_logits = act;
  out.len_logits = len;
  auto [d0, map] = expand_to_target(enc, lengths);
  out.map = map;
  auto [dep, fused] = extract_and_fuse(d0);
  out.dep_logits = dep;
  out.trace = decode_two_stage(fused, enc, source_ids, actions, map);
  return out;
}

Losses NarModel::compute_losses(const ForwardOut& out,
                                const std::vector<editlabel::RepairAction>& gold_actions,
                                const std::vector<int>& gold_lengths,
                                const std::vector<int>& gold_dep_cells,
                                const std::vector<int>& fixed_ids) {
  Losses loss;
  const int m = out.map.size();
  if (static_cast<int>(fixed_ids.size()) != m)
    throw ConfigError("fixed sequence length does not match the expanded target");

  loss.dec = nn::cross_entropy_rows(out.trace.logits_first, fixed_ids, -1);
  if (cfg.use_two_stage) {
    std::vector<int> masked_targets(fixed_ids);
    for (int p = 0; p < m; ++p)
      if (out.trace.retained[static_cast<size_t>(p)]) masked_targets[static_cast<size_t>(p)] = -1;
    loss.dec = nn::add(loss.dec,
                       nn::cross_entropy_rows(out.trace.logits_second, masked_targets, -1));
  }

  if (cfg.use_action_predictor) {
    std::vector<int> act_targets(gold_actions.size());
    for (size_t i = 0; i < gold_actions.size(); ++i)
      act_targets[i] = static_cast<int>(gold_actions[i]);
    loss.act = nn::cross_entropy_rows(out.act_logits, act_targets, -1);
  } else {
    loss.act = Tensor::scalar(0.0);
  }

  std::vector<int> len_targets(gold_lengths.size());
  for (size_t i = 0; i < gold_lengths.size(); ++i)
    len_targets[i] = std::min(gold_lengths[i], cfg.max_repair_len - 1);
  loss.len = nn::cross_entropy_rows(out.len_logits, len_targets, -1);

  if (cfg.use_dependency_extractor) {
    if (gold_dep_cells.size() != static_cast<size_t>(m) * static_cast<size_t>(m))
      throw ConfigError("dependency grid does not match the expanded target");
    loss.depend = nn::cross_entropy_rows(out.dep_logits, gold_dep_cells, -1);
  } else {
    loss.depend = Tensor::scalar(0.0);
  }

  Tensor aux = cfg.use_action_predictor ? nn::add(loss.act, loss.len) : loss.len;
  loss.total = nn::add(loss.dec, nn::scale(aux, cfg.alpha));
  if (cfg.use_dependency_extractor)
    loss.total = nn::add(loss.total, nn::scale(loss.depend, cfg.lambda));
  return loss;
}

// --- ArModel ---------------------------------------------------------------

ArModel::ArModel(ModelConfig config, uint64_t init_seed) : cfg(std::move(config)) {
  cfg.validate();
  init_params(init_seed);
}

void ArModel::init_params(uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int d = cfg.d_model, hid = cfg.ffn_mult * cfg.d_model;
  params.add("emb.tok", nn::glorot(cfg.vocab_size, d, rng));
  params.add("emb.pos", nn::glorot(cfg.max_seq_len, d, rng));
  params.add("emb.tpos", nn::glorot(cfg.max_seq_len, d, rng));
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    add_ln(params, p + ".ln1", d);
    add_attn(params, p + ".attn", d, rng);
    add_ln(params, p + ".ln2", d);
    add_ffn(params, p + ".ffn", d, hid, rng);
  }
  add_ln(params, "enc.lnf", d);
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    add_ln(params, p + ".ln1", d);
    add_attn(params, p + ".self", d, rng);
    add_ln(params, p + ".ln2", d);
    add_attn(params, p + ".cross", d, rng);
    add_ln(params, p + ".ln3", d);
    add_ffn(params, p + ".ffn", d, hid, rng);
  }
  add_ln(params, "dec.lnf", d);
  params.add("out.w", nn::glorot(d, cfg.vocab_size, rng));
  params.add("out.b", nn::zeros_param({cfg.vocab_size}));
}

Tensor ArModel::drop(const Tensor& x) {
  return nn::dropout(x, cfg.dropout, drop_rng, train_mode);
}
Tensor ArModel::ln(const Tensor& x, const std::string& prefix) {
  return ln_f(params, x, prefix);
}
Tensor ArModel::ffn(const Tensor& x, const std::string& prefix) {
  return ffn_f(params, x, prefix);
}
Tensor ArModel::mha(const Tensor& q_in, const Tensor& kv_in, const std::string& prefix,
                    const std::vector<double>* add_mask) {
  return mha_f(params, cfg.heads, q_in, kv_in, prefix, add_mask);
}

Tensor ArModel::encode(const std::vector<int>& ids) {
  if (ids.empty()) throw CapacityError("cannot encode an empty token sequence");
  if (static_cast<int>(ids.size()) > cfg.max_seq_len)
    throw CapacityError("source length exceeds max_seq_len");
  Tensor x = nn::add(nn::embedding(params.get("emb.tok"), ids),
                     nn::embedding(params.get("emb.pos"), iota_ids(ids.size())));
  x = drop(x);
  const std::vector<double> mask = pad_mask(ids);
  const std::vector<double>* maskp = mask.empty() ? nullptr : &mask;
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    Tensor q = ln(x, p + ".ln1");
    x = nn::add(x, drop(mha(q, q, p + ".attn", maskp)));
    x = nn::add(x, drop(ffn(ln(x, p + ".ln2"), p + ".ffn")));
  }
  return ln(x, "enc.lnf");
}

Tensor ArModel::teacher_logits(const Tensor& enc, const std::vector<int>& target_ids) {
  std::vector<int> in_ids;
  in_ids.reserve(target_ids.size() + 1);
  in_ids.push_back(toylang::kBosId);
  in_ids.insert(in_ids.end(), target_ids.begin(), target_ids.end());
  const int t = static_cast<int>(in_ids.size());
  if (t > cfg.max_seq_len) throw CapacityError("target length exceeds max_seq_len");

  Tensor x = nn::add(nn::embedding(params.get("emb.tok"), in_ids),
                     nn::embedding(params.get("emb.tpos"), iota_ids(in_ids.size())));
  x = drop(x);
  const std::vector<double> mask = causal_mask(t);
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    Tensor q = ln(x, p + ".ln1");
    x = nn::add(x, drop(mha(q, q, p + ".self", &mask)));
    x = nn::add(x, drop(mha(ln(x, p + ".ln2"), enc, p + ".cross", nullptr)));
    x = nn::add(x, drop(ffn(ln(x, p + ".ln3"), p + ".ffn")));
  }
  x = ln(x, "dec.lnf");
  return nn::add_rowvec(nn::matmul(x, params.get("out.w")), params.get("out.b"));
}

std::vector<int> ArModel::decode_greedy(const Tensor& enc, int max_len, int force_len,
                                        int* passes_out) {
  nn::NoGradGuard ng;
  std::vector<int> emitted;
  int passes = 0;
  const int limit = force_len > 0 ? force_len : max_len;
  while (static_cast<int>(emitted.size()) < limit) {
    Tensor logits = teacher_logits(enc, emitted);  // full prefix recompute each step
    ++passes;
    const int last = logits.rows() - 1;
    const int tok = argmax_row(logits.val(), last, cfg.vocab_size);
    if (force_len <= 0 && tok == toylang::kEosId) break;
    emitted.push_back(tok);
  }
  if (passes_out) *passes_out = passes;
  return emitted;
}

}  // namespace narfix::model
