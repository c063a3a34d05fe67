#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "narfix/pipeline.hpp"

using json = nlohmann::json;
namespace tl = narfix::toylang;
namespace pl = narfix::pipeline;
namespace md = narfix::model;

namespace {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
  const char* env = std::getenv("NARFIX_LOG");
  if (!env) return LogLevel::Error;
  const std::string v(env);
  if (v == "debug") return LogLevel::Debug;
  if (v == "info") return LogLevel::Info;
  return LogLevel::Error;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::Info) std::cerr << "[info] " << msg << "\n";
}

struct CommonFlags {
  std::string config_path;
  uint64_t seed = 1;
  std::string out;
  int n = 1000;
  std::string ckpt;
  std::string ar_ckpt;
  std::string input;
  int k = 16;
  std::string lengths = "64,128,256";
  int threads = 1;
  std::string precision = "f64";
  std::vector<std::string> ablate;
};

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json j;
  in >> j;
  return j;
}

// Precedence: command-line flags > config file > built-in defaults.
md::ModelConfig resolve_model_config(const json& file_cfg, const CommonFlags& f) {
  json model_json = file_cfg.value("model", json::object());
  if (!model_json.contains("vocab_size")) model_json["vocab_size"] = 1;  // replaced by vocab
  md::ModelConfig cfg = md::ModelConfig::from_json(model_json);
  for (const auto& a : f.ablate) {
    if (a == "action") cfg.use_action_predictor = false;
    else if (a == "dep") cfg.use_dependency_extractor = false;
    else if (a == "two-stage") cfg.use_two_stage = false;
    else throw CLI::ValidationError("--ablate", "unknown ablation '" + a + "'");
  }
  return cfg;
}

std::vector<int> parse_lengths(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  if (out.empty()) throw CLI::ValidationError("--lengths", "no lengths given");
  return out;
}

std::vector<std::string> read_token_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return tl::token_texts(tl::tokenize(ss.str()));
}

void write_or_print(const std::string& out, const std::string& body) {
  if (out.empty()) {
    std::cout << body;
    if (!body.empty() && body.back() != '\n') std::cout << "\n";
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + out + " for writing");
    f << body;
  }
}

int run(int argc, char** argv) {
  CLI::App app{"narfix: non-autoregressive toy-language program repair"};
  app.require_subcommand(1);
  CommonFlags f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config_path, "JSON config file");
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--out", f.out, "output path");
    sub->add_option("--threads", f.threads, "worker threads for labeling/inference");
    sub->add_option("--precision", f.precision, "checkpoint storage precision")
        ->check(CLI::IsMember({"f32", "f64"}));
    return sub;
  };

  auto* gen = add_common(app.add_subcommand("gen-corpus", "generate a mutation corpus"));
  gen->add_option("--n", f.n, "record count");

  auto* lab = add_common(app.add_subcommand("label", "derive repair labels + dependency grids"));
  lab->add_option("--input", f.input, "corpus JSONL")->required();

  auto* tra = add_common(app.add_subcommand("train", "train a model"));
  tra->add_option("--input", f.input, "labeled corpus JSONL")->required();
  tra->add_option("--ablate", f.ablate, "disable a module: action, dep, two-stage")
      ->allow_extra_args(false);

  auto* rep = add_common(app.add_subcommand("repair", "rank patch candidates for a buggy input"));
  rep->add_option("--ckpt", f.ckpt, "model checkpoint")->required();
  rep->add_option("--input", f.input, "buggy source file")->required();
  rep->add_option("--k", f.k, "candidate count");

  auto* ben = add_common(app.add_subcommand("bench", "AR-vs-NAR latency benchmark"));
  ben->add_option("--ckpt", f.ckpt, "NAR checkpoint")->required();
  ben->add_option("--ar-ckpt", f.ar_ckpt, "AR checkpoint")->required();
  ben->add_option("--lengths", f.lengths, "comma-separated sequence lengths");

  auto* eva = add_common(app.add_subcommand("eval", "bucketed action/length accuracy"));
  eva->add_option("--ckpt", f.ckpt, "model checkpoint")->required();
  eva->add_option("--input", f.input, "labeled test corpus JSONL")->required();

  auto* ana = add_common(app.add_subcommand("analyze", "node/token cosine-similarity table"));
  ana->add_option("--ckpt", f.ckpt, "model checkpoint")->required();
  ana->add_option("--input", f.input, "source file to analyze")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);  // --help → 0, usage errors → nonzero
  }

  const json file_cfg = load_config_file(f.config_path);

  if (gen->parsed()) {
    if (f.out.empty()) throw CLI::ValidationError("--out", "output path required");
    tl::CorpusConfig cc;
    cc.n = f.n;
    if (file_cfg.contains("corpus")) cc.n = file_cfg["corpus"].value("n", cc.n);
    if (gen->count("--n") > 0) cc.n = f.n;
    tl::gen_corpus(cc, f.seed, f.out, tl::vocab_path_for(f.out));
    log_info("wrote corpus " + f.out);
    return 0;
  }
  if (lab->parsed()) {
    if (f.out.empty()) throw CLI::ValidationError("--out", "output path required");
    pl::label_corpus(f.input, f.out, f.threads);
    log_info("wrote labeled corpus " + f.out);
    return 0;
  }
  if (tra->parsed()) {
    if (f.out.empty()) throw CLI::ValidationError("--out", "output path required");
    pl::TrainOptions opt;
    opt.config = resolve_model_config(file_cfg, f);
    opt.seed = f.seed;
    opt.precision = f.precision;
    const json tc = file_cfg.value("train", json::object());
    opt.epochs = tc.value("epochs", opt.epochs);
    opt.batch_size = tc.value("batch_size", opt.batch_size);
    opt.peak_lr = tc.value("peak_lr", opt.peak_lr);
    opt.warmup_steps = tc.value("warmup_steps", opt.warmup_steps);
    opt.resume = tc.value("resume", opt.resume);
    auto logs = pl::train(opt, f.input, f.out);
    for (const auto& line : logs) std::cout << line.dump() << "\n";
    log_info("wrote checkpoint " + f.out);
    return 0;
  }
  if (rep->parsed()) {
    tl::Vocab vocab;
    auto m = pl::load_nar(f.ckpt, vocab);
    auto buggy = read_token_file(f.input);
    auto patches = pl::repair(m, vocab, buggy, f.k, f.seed);
    json out;
    out["config"] = m.cfg.to_json();
    out["patches"] = json::array();
    for (const auto& p : patches) out["patches"].push_back(p.to_json());
    write_or_print(f.out, out.dump(2));
    return 0;
  }
  if (ben->parsed()) {
    tl::Vocab vocab, vocab_ar;
    auto nar = pl::load_nar(f.ckpt, vocab);
    auto ar = pl::load_ar(f.ar_ckpt, vocab_ar);
    auto report = pl::bench_latency(nar, ar, parse_lengths(f.lengths), 5);
    write_or_print(f.out, report.to_json().dump(2));
    return 0;
  }
  if (eva->parsed()) {
    tl::Vocab vocab;
    auto m = pl::load_nar(f.ckpt, vocab);
    auto records = pl::load_labeled(f.input);
    auto table = pl::eval_predictor(m, vocab, records);
    write_or_print(f.out, table.to_csv());
    return 0;
  }
  if (ana->parsed()) {
    tl::Vocab vocab;
    auto m = pl::load_nar(f.ckpt, vocab);
    auto tokens = read_token_file(f.input);
    auto rep_out = pl::analyze_similarity(m, vocab, tokens);
    write_or_print(f.out, rep_out.csv);
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
