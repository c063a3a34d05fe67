#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "narfix/pipeline.hpp"

using namespace narfix;
using pipeline::LabeledRecord;

namespace {

struct TempFiles {
  std::vector<std::string> paths;
  ~TempFiles() {
    for (const auto& p : paths) std::remove(p.c_str());
  }
  const std::string& track(std::string p) {
    paths.push_back(std::move(p));
    return paths.back();
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

model::ModelConfig tiny_config(int vocab) {
  model::ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 2;
  cfg.split_k = 1;
  cfg.max_repair_len = 6;
  cfg.max_seq_len = 64;
  cfg.p_max = 64;
  cfg.dropout = 0.1;
  return cfg;
}

void make_labeled(const std::string& corpus, const std::string& labeled, int n, uint64_t seed,
                  TempFiles& tmp) {
  toylang::CorpusConfig cc;
  cc.n = n;
  toylang::gen_corpus(cc, seed, corpus, toylang::vocab_path_for(corpus));
  tmp.track(corpus);
  tmp.track(toylang::vocab_path_for(corpus));
  pipeline::label_corpus(corpus, labeled);
  tmp.track(labeled);
  tmp.track(toylang::vocab_path_for(labeled));
}

}  // namespace

TEST_CASE("label_record agrees with direct label and matrix computation") {
  toylang::CorpusConfig cc;
  cc.n = 20;
  for (const auto& rec : toylang::gen_records(cc, 5)) {
    auto lr = pipeline::label_record(rec);
    auto direct = editlabel::to_repair_labels(editlabel::edit_script(rec.buggy, rec.fixed),
                                              rec.buggy, rec.fixed);
    CHECK(lr.labels.actions == direct.actions);
    CHECK(lr.labels.lengths == direct.lengths);
    auto mat = depmat::nca_matrix(toylang::parse(rec.fixed)).first;
    CHECK(lr.dense_dep() == mat.cells);
  }
}

TEST_CASE("label_corpus output is thread-count independent and loadable") {
  TempFiles tmp;
  toylang::CorpusConfig cc;
  cc.n = 30;
  toylang::gen_corpus(cc, 9, "plc.jsonl", "plc.vocab.json");
  tmp.track("plc.jsonl");
  tmp.track("plc.vocab.json");
  pipeline::label_corpus("plc.jsonl", "plc1.labeled.jsonl", 1);
  pipeline::label_corpus("plc.jsonl", "plc4.labeled.jsonl", 4);
  tmp.track("plc1.labeled.jsonl");
  tmp.track("plc1.labeled.vocab.json");
  tmp.track("plc4.labeled.jsonl");
  tmp.track("plc4.labeled.vocab.json");
  CHECK(slurp("plc1.labeled.jsonl") == slurp("plc4.labeled.jsonl"));

  auto records = pipeline::load_labeled("plc1.labeled.jsonl");
  REQUIRE(records.size() == 30);
  for (const auto& lr : records) {
    CHECK(editlabel::apply_labels(lr.rec.buggy, lr.labels) == lr.rec.fixed);
    CHECK(lr.edited_count() > 0);
  }
}

TEST_CASE("training is deterministic and resumable") {
  TempFiles tmp;
  make_labeled("ptr.jsonl", "ptr.labeled.jsonl", 12, 21, tmp);

  pipeline::TrainOptions opt;
  opt.config = tiny_config(0);
  opt.seed = 4;
  opt.epochs = 2;
  opt.batch_size = 4;
  opt.warmup_steps = 3;

  auto logs_a = pipeline::train(opt, "ptr.labeled.jsonl", "ptr_a.bin");
  tmp.track("ptr_a.bin");
  auto logs_b = pipeline::train(opt, "ptr.labeled.jsonl", "ptr_b.bin");
  tmp.track("ptr_b.bin");
  REQUIRE(logs_a.size() == 2);
  CHECK(logs_a == logs_b);
  CHECK(slurp("ptr_a.bin") == slurp("ptr_b.bin"));
  CHECK(logs_a[1]["L_total"].get<double>() < logs_a[0]["L_total"].get<double>());

  // Interrupted run: 1 epoch, then resume for the second.
  auto opt1 = opt;
  opt1.epochs = 1;
  pipeline::train(opt1, "ptr.labeled.jsonl", "ptr_c.bin");
  tmp.track("ptr_c.bin");
  auto opt2 = opt;
  opt2.resume = "ptr_c.bin";
  auto logs_c = pipeline::train(opt2, "ptr.labeled.jsonl", "ptr_c.bin");
  REQUIRE(logs_c.size() == 1);
  CHECK(logs_c[0] == logs_a[1]);
  CHECK(slurp("ptr_c.bin") == slurp("ptr_a.bin"));
}

TEST_CASE("divergence guard rejects a blown-up run") {
  TempFiles tmp;
  make_labeled("pdiv.jsonl", "pdiv.labeled.jsonl", 6, 2, tmp);
  pipeline::TrainOptions opt;
  opt.config = tiny_config(0);
  opt.epochs = 3;
  opt.batch_size = 1;
  opt.peak_lr = 1e160;  // overflows activations after one step
  opt.warmup_steps = 0;
  tmp.track("pdiv.bin");
  CHECK_THROWS_AS(pipeline::train(opt, "pdiv.labeled.jsonl", "pdiv.bin"),
                  pipeline::DivergedError);
}

TEST_CASE("checkpoint loaders rebuild the right architecture") {
  TempFiles tmp;
  make_labeled("pck.jsonl", "pck.labeled.jsonl", 8, 3, tmp);
  pipeline::TrainOptions opt;
  opt.config = tiny_config(0);
  opt.epochs = 1;
  pipeline::train(opt, "pck.labeled.jsonl", "pck_nar.bin");
  tmp.track("pck_nar.bin");
  opt.config.arch = "ar";
  pipeline::train(opt, "pck.labeled.jsonl", "pck_ar.bin");
  tmp.track("pck_ar.bin");

  toylang::Vocab v;
  auto nar = pipeline::load_nar("pck_nar.bin", v);
  CHECK(nar.cfg.d_model == 16);
  CHECK(v.size() == toylang::build_vocab().size());
  CHECK_THROWS_AS(pipeline::load_nar("pck_ar.bin", v), pipeline::SchemaError);
  CHECK_THROWS_AS(pipeline::load_ar("pck_nar.bin", v), pipeline::SchemaError);
  auto ar = pipeline::load_ar("pck_ar.bin", v);
  CHECK(ar.cfg.arch == "ar");
}

TEST_CASE("validate_patch is exact token match") {
  CHECK(pipeline::validate_patch({"a", "b"}, {"a", "b"}));
  CHECK_FALSE(pipeline::validate_patch({"a", "b"}, {"a", "c"}));
  CHECK(pipeline::validate_patch({}, {}));
  CHECK_FALSE(pipeline::validate_patch({"a"}, {}));
}

TEST_CASE("repair returns ranked deterministic candidates") {
  TempFiles tmp;
  make_labeled("prep.jsonl", "prep.labeled.jsonl", 10, 17, tmp);
  pipeline::TrainOptions opt;
  opt.config = tiny_config(0);
  opt.epochs = 1;
  pipeline::train(opt, "prep.labeled.jsonl", "prep.bin");
  tmp.track("prep.bin");
  toylang::Vocab vocab;
  auto m = pipeline::load_nar("prep.bin", vocab);

  auto buggy = toylang::gen_program(100);
  auto k16 = pipeline::repair(m, vocab, buggy, 16, 1);
  REQUIRE(!k16.empty());
  CHECK(k16.size() <= 16);
  for (size_t i = 1; i < k16.size(); ++i) CHECK(k16[i - 1].score >= k16[i].score);
  for (size_t i = 1; i < k16.size(); ++i) CHECK(k16[i - 1].tokens != k16[i].tokens);
  for (const auto& c : k16)
    CHECK(std::abs(c.score - (c.token_lp + c.action_lp + c.length_lp)) < 1e-6);

  auto k1 = pipeline::repair(m, vocab, buggy, 1, 1);
  REQUIRE(k1.size() == 1);
  CHECK(k1[0].tokens == k16[0].tokens);

  auto again = pipeline::repair(m, vocab, buggy, 16, 1);
  REQUIRE(again.size() == k16.size());
  for (size_t i = 0; i < k16.size(); ++i) CHECK(again[i].tokens == k16[i].tokens);

  // Out-of-vocabulary lexemes pass through [UNK] and still yield candidates.
  auto weird = buggy;
  weird[1] = "zzz_not_in_vocab";
  auto unk = pipeline::repair(m, vocab, weird, 4, 1);
  CHECK(!unk.empty());
}

TEST_CASE("bench reports exact pass counts and consistent ratios") {
  toylang::Vocab vocab = toylang::build_vocab();
  auto cfg = tiny_config(static_cast<int>(vocab.size()));
  model::NarModel nar(cfg, 1);
  auto acfg = cfg;
  acfg.arch = "ar";
  model::ArModel ar(acfg, 2);
  auto report = pipeline::bench_latency(nar, ar, {8, 16}, 5);
  REQUIRE(report.rows.size() == 2);
  for (const auto& r : report.rows) {
    CHECK(r.nar_passes == 2);
    CHECK(r.ar_passes == r.m);
    CHECK(r.ratio == doctest::Approx(r.ar_ms / r.nar_ms));
  }

  auto bad = acfg;
  bad.d_model = 32;
  bad.heads = 4;
  model::ArModel mismatched(bad, 3);
  CHECK_THROWS_AS(pipeline::bench_latency(nar, mismatched, {8}, 5), model::ConfigError);
}

TEST_CASE("eval buckets by edited-token count and gold predictions score 100%") {
  TempFiles tmp;
  make_labeled("pev.jsonl", "pev.labeled.jsonl", 25, 23, tmp);
  auto records = pipeline::load_labeled("pev.labeled.jsonl");
  auto table = pipeline::eval_with(records, [](const LabeledRecord& lr) {
    return std::make_pair(lr.labels.actions, lr.labels.lengths);
  });
  CHECK(table.average_action_acc() == doctest::Approx(1.0));
  CHECK(table.average_length_acc() == doctest::Approx(1.0));
  auto csv = table.to_csv();
  CHECK(csv.find("bucket,action_acc,length_acc") == 0);
  CHECK(csv.find("N<=10") != std::string::npos);
  CHECK(csv.find("average") != std::string::npos);
  // Single-mutation bugs edit few tokens, so the large-N buckets stay empty.
  CHECK(csv.find("N>50,n/a,n/a") != std::string::npos);
}

TEST_CASE("count_overcorrections counts modified Keep positions") {
  std::vector<std::string> buggy{"a", "b", "c", "d"};
  std::vector<std::string> fixed{"a", "x", "c", "d"};
  auto labels = editlabel::to_repair_labels(editlabel::edit_script(buggy, fixed), buggy, fixed);
  CHECK(pipeline::count_overcorrections({fixed}, buggy, labels) == 0.0);
  CHECK(pipeline::count_overcorrections({{"q", "x", "c", "q"}}, buggy, labels) == 2.0);
  // Average over one perfect and one doubly-wrong candidate.
  CHECK(pipeline::count_overcorrections({fixed, {"q", "x", "c", "q"}}, buggy, labels) == 1.0);
}

TEST_CASE("similarity report is well-formed") {
  TempFiles tmp;
  make_labeled("psim.jsonl", "psim.labeled.jsonl", 8, 29, tmp);
  pipeline::TrainOptions opt;
  opt.config = tiny_config(0);
  opt.epochs = 1;
  pipeline::train(opt, "psim.labeled.jsonl", "psim.bin");
  tmp.track("psim.bin");
  toylang::Vocab vocab;
  auto m = pipeline::load_nar("psim.bin", vocab);

  auto prog = toylang::token_texts(
      toylang::tokenize("int add ( int a , int b ) { return a + b ; }"));
  auto rep = pipeline::analyze_similarity(m, vocab, prog);
  CHECK(rep.csv.find("node,") == 0);
  CHECK(rep.csv.find("binary_expr#") != std::string::npos);
  CHECK(rep.csv.find("distance,mean_cosine") != std::string::npos);
  REQUIRE(!rep.bucket_mean.empty());
  for (const auto& [dist, mean] : rep.bucket_mean) {
    CHECK(dist >= 1);
    CHECK(dist <= 4);
    CHECK(mean >= -1.0);
    CHECK(mean <= 1.0);
  }

  auto cfg_off = tiny_config(static_cast<int>(vocab.size()));
  cfg_off.use_dependency_extractor = false;
  model::NarModel off(cfg_off, 1);
  CHECK_THROWS_AS(pipeline::analyze_similarity(off, vocab, prog), model::ConfigError);
}
