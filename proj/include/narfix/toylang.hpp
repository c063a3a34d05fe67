#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace narfix::toylang {

enum class TokenKind { Identifier, Keyword, Operator, Literal, Punctuation, Special };

struct Token {
  std::string text;
  int id = -1;  // vocabulary index, -1 until resolved
  TokenKind kind = TokenKind::Identifier;
};

// Reserved vocabulary slots. [PAD]/[MASK]/[UNK] are fixed by contract;
// [BOS]/[EOS] are used by the autoregressive baseline decoder.
inline constexpr int kPadId = 0;
inline constexpr int kMaskId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kBosId = 3;
inline constexpr int kEosId = 4;

class Vocab {
 public:
  Vocab();
  explicit Vocab(std::vector<std::string> tokens);  // must start with the reserved entries

  int add(const std::string& text);            // returns existing id if present
  int id_of(const std::string& text) const;    // kUnkId if absent
  const std::string& text_of(int id) const;
  bool contains(const std::string& text) const;
  size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::vector<std::string>& texts) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;  // JSON array, index = id
  static Vocab load(const std::string& path);
  uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct LexError : std::runtime_error {
  size_t pos;
  LexError(const std::string& what, size_t p) : std::runtime_error(what), pos(p) {}
};

struct ParseError : std::runtime_error {
  size_t token_pos;
  ParseError(const std::string& what, size_t p) : std::runtime_error(what), token_pos(p) {}
};

std::vector<Token> tokenize(const std::string& source);
std::vector<std::string> token_texts(const std::vector<Token>& tokens);
std::string detokenize(const std::vector<std::string>& texts);  // single-space join

// Concrete syntax tree: every token is a leaf, internal nodes are grammar
// nonterminals. Leaves left-to-right correspond 1:1 to the token sequence.
struct AstNode {
  std::string label;          // nonterminal name, or token text for leaves
  int parent = -1;            // -1 for root
  std::vector<int> children;  // in order
  bool is_leaf = false;
  int token_pos = -1;         // leaf only
};

struct Ast {
  std::vector<AstNode> nodes;
  std::vector<int> leaves;  // node indices, one per token, left to right

  int root() const { return nodes.empty() ? -1 : 0; }
  size_t internal_count() const;
  int depth_of(int node) const;
};

Ast parse(const std::vector<std::string>& tokens);
inline Ast parse(const std::vector<Token>& tokens) { return parse(token_texts(tokens)); }

enum class MutationKind {
  OperatorSwap,
  IdentifierSwap,
  TokenDelete,
  TokenInsert,
  ConditionNegate,
  LiteralChange,
};

const char* mutation_name(MutationKind k);
std::optional<MutationKind> mutation_from_name(const std::string& name);

struct CorpusRecord {
  std::vector<std::string> buggy;
  std::vector<std::string> fixed;
  MutationKind mutation;
  uint64_t seed = 0;
};

struct InapplicableMutation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic function of (fixed, kind, seed). Buggy always differs from
// fixed and stays lexable; it need not parse.
CorpusRecord mutate(const std::vector<std::string>& fixed, MutationKind kind, uint64_t seed);

struct CorpusConfig {
  int n = 1000;                 // record count
  int max_internal_nodes = 64;  // generated programs stay under this cap
};

// One random well-formed program from the template pool.
std::vector<std::string> gen_program(uint64_t seed);

// The closed token universe the generator can emit; the vocabulary is built
// from it so that n=0 still yields a complete vocabulary file.
std::vector<std::string> token_universe();
Vocab build_vocab();

// Writes JSON-lines corpus to out_path and the vocabulary to vocab_path.
// Byte-identical across reruns with the same (config, seed).
void gen_corpus(const CorpusConfig& config, uint64_t seed, const std::string& out_path,
                const std::string& vocab_path);

// In-memory variant used by tests and the trainer.
std::vector<CorpusRecord> gen_records(const CorpusConfig& config, uint64_t seed);

std::string vocab_path_for(const std::string& corpus_path);

}  // namespace narfix::toylang
