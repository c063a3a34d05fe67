#include "narfix/toylang.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include <json.hpp>

namespace narfix::toylang {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

Vocab::Vocab() {
  for (const char* t : {"[PAD]", "[MASK]", "[UNK]", "[BOS]", "[EOS]"}) add(t);
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 3 || tokens_[0] != "[PAD]" || tokens_[1] != "[MASK]" || tokens_[2] != "[UNK]")
    throw std::runtime_error("vocabulary must start with [PAD], [MASK], [UNK]");
  for (size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
}

int Vocab::add(const std::string& text) {
  auto it = index_.find(text);
  if (it != index_.end()) return it->second;
  int id = static_cast<int>(tokens_.size());
  tokens_.push_back(text);
  index_[text] = id;
  return id;
}

int Vocab::id_of(const std::string& text) const {
  auto it = index_.find(text);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::text_of(int id) const {
  if (id < 0 || id >= static_cast<int>(tokens_.size()))
    throw std::out_of_range("vocab id out of range");
  return tokens_[static_cast<size_t>(id)];
}

bool Vocab::contains(const std::string& text) const { return index_.count(text) > 0; }

std::vector<int> Vocab::encode(const std::vector<std::string>& texts) const {
  std::vector<int> ids;
  ids.reserve(texts.size());
  for (const auto& t : texts) ids.push_back(id_of(t));
  return ids;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> texts;
  texts.reserve(ids.size());
  for (int id : ids) texts.push_back(text_of(id));
  return texts;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << json(tokens_).dump() << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return Vocab(j.get<std::vector<std::string>>());
}

uint64_t Vocab::hash() const {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const auto& t : tokens_) {
    for (char c : t) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

namespace {

const std::array<std::string, 6> kTwoCharOps = {"==", "!=", "<=", ">=", "&&", "||"};
const std::string kSingleOps = "+-*/<>=!";
const std::string kPunct = "(){},;";
const std::array<std::string, 4> kKeywords = {"int", "return", "if", "else"};

bool is_keyword(const std::string& s) {
  return std::find(kKeywords.begin(), kKeywords.end(), s) != kKeywords.end();
}

TokenKind classify(const std::string& s) {
  if (is_keyword(s)) return TokenKind::Keyword;
  if (std::isdigit(static_cast<unsigned char>(s[0]))) return TokenKind::Literal;
  if (kPunct.find(s[0]) != std::string::npos) return TokenKind::Punctuation;
  if (kSingleOps.find(s[0]) != std::string::npos || s == "&&" || s == "||")
    return TokenKind::Operator;
  return TokenKind::Identifier;
}

}  // namespace

std::vector<Token> tokenize(const std::string& source) {
  std::vector<Token> out;
  size_t i = 0;
  const size_t n = source.size();
  while (i < n) {
    char c = source[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t j = i;
      while (j < n && (std::isalnum(static_cast<unsigned char>(source[j])) || source[j] == '_')) ++j;
      std::string word = source.substr(i, j - i);
      out.push_back({word, -1, is_keyword(word) ? TokenKind::Keyword : TokenKind::Identifier});
      i = j;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t j = i;
      while (j < n && std::isdigit(static_cast<unsigned char>(source[j]))) ++j;
      out.push_back({source.substr(i, j - i), -1, TokenKind::Literal});
      i = j;
      continue;
    }
    if (i + 1 < n) {
      std::string two = source.substr(i, 2);
      if (std::find(kTwoCharOps.begin(), kTwoCharOps.end(), two) != kTwoCharOps.end()) {
        out.push_back({two, -1, TokenKind::Operator});
        i += 2;
        continue;
      }
    }
    if (kSingleOps.find(c) != std::string::npos) {
      if (c == '&' || c == '|')
        throw LexError(std::string("stray '") + c + "'", i);
      out.push_back({std::string(1, c), -1, TokenKind::Operator});
      ++i;
      continue;
    }
    if (kPunct.find(c) != std::string::npos) {
      out.push_back({std::string(1, c), -1, TokenKind::Punctuation});
      ++i;
      continue;
    }
    throw LexError(std::string("illegal character '") + c + "'", i);
  }
  return out;
}

std::vector<std::string> token_texts(const std::vector<Token>& tokens) {
  std::vector<std::string> texts;
  texts.reserve(tokens.size());
  for (const auto& t : tokens) texts.push_back(t.text);
  return texts;
}

std::string detokenize(const std::vector<std::string>& texts) {
  std::string out;
  for (size_t i = 0; i < texts.size(); ++i) {
    if (i) out += ' ';
    out += texts[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

size_t Ast::internal_count() const {
  size_t c = 0;
  for (const auto& n : nodes)
    if (!n.is_leaf) ++c;
  return c;
}

int Ast::depth_of(int node) const {
  int d = 0;
  while (nodes[static_cast<size_t>(node)].parent >= 0) {
    node = nodes[static_cast<size_t>(node)].parent;
    ++d;
  }
  return d;
}

namespace {

struct TmpNode {
  std::string label;
  bool is_leaf = false;
  int token_pos = -1;
  std::vector<std::unique_ptr<TmpNode>> kids;
};

using NodePtr = std::unique_ptr<TmpNode>;

NodePtr internal(std::string label) {
  auto n = std::make_unique<TmpNode>();
  n->label = std::move(label);
  return n;
}

struct Parser {
  const std::vector<std::string>& toks;
  size_t pos = 0;

  explicit Parser(const std::vector<std::string>& t) : toks(t) {}

  bool done() const { return pos >= toks.size(); }
  const std::string& peek(size_t ahead = 0) const {
    static const std::string kEnd;
    return pos + ahead < toks.size() ? toks[pos + ahead] : kEnd;
  }

  [[noreturn]] void fail(const std::string& msg) {
    throw ParseError(msg + " at token " + std::to_string(pos), pos);
  }

  NodePtr leaf() {
    if (done()) fail("unexpected end of input");
    auto n = std::make_unique<TmpNode>();
    n->label = toks[pos];
    n->is_leaf = true;
    n->token_pos = static_cast<int>(pos);
    ++pos;
    return n;
  }

  NodePtr expect(const std::string& text) {
    if (peek() != text) fail("expected '" + text + "'");
    return leaf();
  }

  bool is_ident(const std::string& s) const {
    if (s.empty()) return false;
    if (is_keyword(s)) return false;
    return std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_';
  }
  bool is_literal(const std::string& s) const {
    return !s.empty() && std::isdigit(static_cast<unsigned char>(s[0]));
  }

  NodePtr program() {
    auto n = internal("program");
    while (!done()) n->kids.push_back(item());
    return n;
  }

  NodePtr item() {
    if (peek() == "int" && is_ident(peek(1)) && peek(2) == "(") return func_def();
    return stmt();
  }

  NodePtr func_def() {
    auto n = internal("func_def");
    n->kids.push_back(expect("int"));
    n->kids.push_back(ident_leaf());
    n->kids.push_back(expect("("));
    if (peek() != ")") n->kids.push_back(params());
    n->kids.push_back(expect(")"));
    n->kids.push_back(block());
    return n;
  }

  NodePtr ident_leaf() {
    if (!is_ident(peek())) fail("expected identifier");
    return leaf();
  }

  NodePtr params() {
    auto n = internal("params");
    n->kids.push_back(param());
    while (peek() == ",") {
      n->kids.push_back(leaf());
      n->kids.push_back(param());
    }
    return n;
  }

  NodePtr param() {
    auto n = internal("param");
    n->kids.push_back(expect("int"));
    n->kids.push_back(ident_leaf());
    return n;
  }

  NodePtr block() {
    auto n = internal("block");
    n->kids.push_back(expect("{"));
    while (!done() && peek() != "}") n->kids.push_back(stmt());
    n->kids.push_back(expect("}"));
    return n;
  }

  NodePtr stmt() {
    if (peek() == "return") return return_stmt();
    if (peek() == "if") return if_stmt();
    if (peek() == "int") return decl_stmt();
    if (is_ident(peek()) && peek(1) == "=") return assign_stmt();
    if (is_ident(peek()) && peek(1) == "(") return call_stmt();
    fail("expected statement");
  }

  NodePtr return_stmt() {
    auto n = internal("return_stmt");
    n->kids.push_back(expect("return"));
    n->kids.push_back(expr());
    n->kids.push_back(expect(";"));
    return n;
  }

  NodePtr if_stmt() {
    auto n = internal("if_stmt");
    n->kids.push_back(expect("if"));
    n->kids.push_back(expect("("));
    n->kids.push_back(expr());
    n->kids.push_back(expect(")"));
    n->kids.push_back(block());
    if (peek() == "else") {
      n->kids.push_back(leaf());
      n->kids.push_back(block());
    }
    return n;
  }

  NodePtr decl_stmt() {
    auto n = internal("decl_stmt");
    n->kids.push_back(expect("int"));
    n->kids.push_back(ident_leaf());
    if (peek() == "=") {
      n->kids.push_back(leaf());
      n->kids.push_back(expr());
    }
    n->kids.push_back(expect(";"));
    return n;
  }

  NodePtr assign_stmt() {
    auto n = internal("assign_stmt");
    n->kids.push_back(ident_leaf());
    n->kids.push_back(expect("="));
    n->kids.push_back(expr());
    n->kids.push_back(expect(";"));
    return n;
  }

  NodePtr call_stmt() {
    auto n = internal("call_stmt");
    n->kids.push_back(call_expr());
    n->kids.push_back(expect(";"));
    return n;
  }

  NodePtr call_expr() {
    auto n = internal("call_expr");
    n->kids.push_back(ident_leaf());
    n->kids.push_back(expect("("));
    if (peek() != ")") {
      auto args = internal("args");
      args->kids.push_back(expr());
      while (peek() == ",") {
        args->kids.push_back(leaf());
        args->kids.push_back(expr());
      }
      n->kids.push_back(std::move(args));
    }
    n->kids.push_back(expect(")"));
    return n;
  }

  // Precedence: || < && < comparisons < additive < multiplicative.
  NodePtr expr() { return or_expr(); }

  NodePtr binary_chain(NodePtr (Parser::*next)(), std::initializer_list<const char*> ops) {
    auto lhs = (this->*next)();
    for (;;) {
      bool hit = false;
      for (const char* op : ops)
        if (peek() == op) hit = true;
      if (!hit) break;
      auto n = internal("binary_expr");
      n->kids.push_back(std::move(lhs));
      n->kids.push_back(leaf());
      n->kids.push_back((this->*next)());
      lhs = std::move(n);
    }
    return lhs;
  }

  NodePtr or_expr() { return binary_chain(&Parser::and_expr, {"||"}); }
  NodePtr and_expr() { return binary_chain(&Parser::cmp_expr, {"&&"}); }
  NodePtr cmp_expr() {
    return binary_chain(&Parser::add_expr, {"==", "!=", "<", "<=", ">", ">="});
  }
  NodePtr add_expr() { return binary_chain(&Parser::mul_expr, {"+", "-"}); }
  NodePtr mul_expr() { return binary_chain(&Parser::primary, {"*", "/"}); }

  NodePtr primary() {
    if (is_literal(peek())) return leaf();
    if (peek() == "(") {
      auto n = internal("paren_expr");
      n->kids.push_back(leaf());
      n->kids.push_back(expr());
      n->kids.push_back(expect(")"));
      return n;
    }
    if (is_ident(peek())) {
      if (peek(1) == "(") return call_expr();
      return leaf();
    }
    fail("expected expression");
  }
};

void flatten(const TmpNode& src, int parent, Ast& ast) {
  int idx = static_cast<int>(ast.nodes.size());
  AstNode node;
  node.label = src.label;
  node.parent = parent;
  node.is_leaf = src.is_leaf;
  node.token_pos = src.token_pos;
  ast.nodes.push_back(std::move(node));
  if (src.is_leaf) {
    ast.leaves.push_back(idx);
    return;
  }
  for (const auto& kid : src.kids) {
    int child_idx = static_cast<int>(ast.nodes.size());
    ast.nodes[static_cast<size_t>(idx)].children.push_back(child_idx);
    flatten(*kid, idx, ast);
  }
}

}  // namespace

Ast parse(const std::vector<std::string>& tokens) {
  Parser p(tokens);
  auto root = p.program();
  Ast ast;
  flatten(*root, -1, ast);
  return ast;
}

// ---------------------------------------------------------------------------
// Program generator
// ---------------------------------------------------------------------------

namespace {

const std::array<std::string, 8> kParamPool = {"a", "b", "c", "n", "m", "v", "x", "y"};
const std::array<std::string, 4> kTempPool = {"t", "s", "r", "w"};

uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t h = a * 0x9e3779b97f4a7c15ull + b + 0x7f4a7c15u;
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebull;
  h ^= h >> 31;
  return h;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

// Each template is rendered with placeholders A/B/C (params), T (local),
// K (digit literal). Function names are chosen so that the name alone
// determines the body shape, which is what makes the repair task learnable
// from mutated samples.
std::string render_template(int t, std::mt19937_64& rng) {
  auto pick_params = [&](int count) {
    std::array<std::string, 3> out;
    std::vector<size_t> idx(kParamPool.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int i = 0; i < count; ++i) {
      size_t j = i + rng() % (idx.size() - static_cast<size_t>(i));
      std::swap(idx[static_cast<size_t>(i)], idx[j]);
      out[static_cast<size_t>(i)] = kParamPool[idx[static_cast<size_t>(i)]];
    }
    return out;
  };
  int k = 2 + static_cast<int>(rng() % 8);  // digit 2..9
  std::string K = std::to_string(k);
  auto P = pick_params(3);
  const std::string& A = P[0];
  const std::string& B = P[1];
  const std::string& C = P[2];
  std::string T = kTempPool[rng() % kTempPool.size()];

  switch (t) {
    case 0: return "int add ( int " + A + " , int " + B + " ) { return " + A + " + " + B + " ; }";
    case 1: return "int sub ( int " + A + " , int " + B + " ) { return " + A + " - " + B + " ; }";
    case 2: return "int mul ( int " + A + " , int " + B + " ) { return " + A + " * " + B + " ; }";
    case 3: return "int div ( int " + A + " , int " + B + " ) { return " + A + " / " + B + " ; }";
    case 4:
      return "int safe_div ( int " + A + " , int " + B + " ) { if ( " + B +
             " != 0 ) { return " + A + " / " + B + " ; } return 0 ; }";
    case 5:
      return "int max2 ( int " + A + " , int " + B + " ) { if ( " + A + " > " + B +
             " ) { return " + A + " ; } return " + B + " ; }";
    case 6:
      return "int min2 ( int " + A + " , int " + B + " ) { if ( " + A + " < " + B +
             " ) { return " + A + " ; } return " + B + " ; }";
    case 7: return "int scale" + K + " ( int " + A + " ) { return " + A + " * " + K + " ; }";
    case 8: return "int shift" + K + " ( int " + A + " ) { return " + A + " + " + K + " ; }";
    case 9:
      return "int clamp0 ( int " + A + " ) { if ( " + A + " < 0 ) { return 0 ; } return " + A +
             " ; }";
    case 10:
      return "int eq_flag ( int " + A + " , int " + B + " ) { if ( " + A + " == " + B +
             " ) { return 1 ; } return 0 ; }";
    case 11:
      return "int neq_flag ( int " + A + " , int " + B + " ) { if ( " + A + " != " + B +
             " ) { return 1 ; } return 0 ; }";
    case 12:
      return "int ge_flag ( int " + A + " , int " + B + " ) { if ( " + A + " >= " + B +
             " ) { return 1 ; } return 0 ; }";
    case 13:
      return "int le_flag ( int " + A + " , int " + B + " ) { if ( " + A + " <= " + B +
             " ) { return 1 ; } return 0 ; }";
    case 14:
      return "int abs_diff ( int " + A + " , int " + B + " ) { if ( " + A + " > " + B +
             " ) { return " + A + " - " + B + " ; } return " + B + " - " + A + " ; }";
    case 15:
      return "int sum3 ( int " + A + " , int " + B + " , int " + C + " ) { return " + A + " + " +
             B + " + " + C + " ; }";
    case 16: return "int poly" + K + " ( int " + A + " ) { return " + A + " * " + A + " + " + K + " ; }";
    case 17:
      return "int gate ( int " + A + " , int " + B + " ) { if ( " + A + " > 0 && " + B +
             " > 0 ) { return 1 ; } return 0 ; }";
    case 18:
      return "int or_gate ( int " + A + " , int " + B + " ) { if ( " + A + " > 0 || " + B +
             " > 0 ) { return 1 ; } return 0 ; }";
    case 19: {
      const std::array<std::string, 3> callees = {"add", "sub", "mul"};
      const std::string& f = callees[rng() % callees.size()];
      return "int use_" + f + " ( int " + A + " , int " + B + " ) { return " + f + " ( " + A +
             " , " + B + " ) ; }";
    }
    case 20:
      return "int step" + K + " ( int " + A + " ) { int " + T + " ; " + T + " = " + A + " + " + K +
             " ; return " + T + " ; }";
    default: throw std::logic_error("bad template index");
  }
}

constexpr int kTemplateCount = 21;

}  // namespace

std::vector<std::string> gen_program(uint64_t seed) {
  std::mt19937_64 rng(mix(seed, 0x70726f67));
  int t = static_cast<int>(rng() % kTemplateCount);
  return split_ws(render_template(t, rng));
}

std::vector<std::string> token_universe() {
  std::vector<std::string> out;
  for (const char* s : {"int", "return", "if", "else"}) out.push_back(s);
  for (const char* s : {"+", "-", "*", "/", "==", "!=", "<", "<=", ">", ">=", "&&", "||", "=", "!"})
    out.push_back(s);
  for (const char* s : {"(", ")", "{", "}", ",", ";"}) out.push_back(s);
  for (int d = 0; d <= 9; ++d) out.push_back(std::to_string(d));
  for (const auto& s : kParamPool) out.push_back(s);
  for (const auto& s : kTempPool) out.push_back(s);
  for (const char* s : {"add", "sub", "mul", "div", "safe_div", "max2", "min2", "clamp0",
                        "eq_flag", "neq_flag", "ge_flag", "le_flag", "abs_diff", "sum3", "gate",
                        "or_gate", "use_add", "use_sub", "use_mul"})
    out.push_back(s);
  for (const char* base : {"scale", "shift", "poly", "step"})
    for (int d = 2; d <= 9; ++d) out.push_back(base + std::to_string(d));
  return out;
}

Vocab build_vocab() {
  Vocab v;
  for (const auto& t : token_universe()) v.add(t);
  return v;
}

// ---------------------------------------------------------------------------
// Mutation operators
// ---------------------------------------------------------------------------

const char* mutation_name(MutationKind k) {
  switch (k) {
    case MutationKind::OperatorSwap: return "operator-swap";
    case MutationKind::IdentifierSwap: return "identifier-swap";
    case MutationKind::TokenDelete: return "token-delete";
    case MutationKind::TokenInsert: return "token-insert";
    case MutationKind::ConditionNegate: return "condition-negate";
    case MutationKind::LiteralChange: return "literal-change";
  }
  return "?";
}

std::optional<MutationKind> mutation_from_name(const std::string& name) {
  for (MutationKind k :
       {MutationKind::OperatorSwap, MutationKind::IdentifierSwap, MutationKind::TokenDelete,
        MutationKind::TokenInsert, MutationKind::ConditionNegate, MutationKind::LiteralChange})
    if (name == mutation_name(k)) return k;
  return std::nullopt;
}

namespace {

// Swap table for operator-swap; the mapping is its own inverse.
std::string swapped_operator(const std::string& op) {
  if (op == "+") return "-";
  if (op == "-") return "+";
  if (op == "*") return "/";
  if (op == "/") return "*";
  if (op == "==") return "!=";
  if (op == "!=") return "==";
  if (op == "<") return ">";
  if (op == ">") return "<";
  if (op == "<=") return ">=";
  if (op == ">=") return "<=";
  if (op == "&&") return "||";
  if (op == "||") return "&&";
  return {};
}

// Logical negation of a comparison, distinct from the swap table for < and >.
std::string negated_comparison(const std::string& op) {
  if (op == "==") return "!=";
  if (op == "!=") return "==";
  if (op == "<") return ">=";
  if (op == ">=") return "<";
  if (op == ">") return "<=";
  if (op == "<=") return ">";
  return {};
}

bool is_identifier_text(const std::string& s) {
  if (s.empty() || is_keyword(s)) return false;
  return std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_';
}

}  // namespace

CorpusRecord mutate(const std::vector<std::string>& fixed, MutationKind kind, uint64_t seed) {
  std::mt19937_64 rng(mix(seed, static_cast<uint64_t>(kind) + 0xb0b));
  std::vector<std::string> buggy = fixed;
  auto choose = [&](size_t n) { return static_cast<size_t>(rng() % n); };

  switch (kind) {
    case MutationKind::OperatorSwap: {
      std::vector<size_t> sites;
      for (size_t i = 0; i < fixed.size(); ++i)
        if (!swapped_operator(fixed[i]).empty()) sites.push_back(i);
      if (sites.empty()) throw InapplicableMutation("no operator site");
      size_t at = sites[choose(sites.size())];
      buggy[at] = swapped_operator(fixed[at]);
      break;
    }
    case MutationKind::ConditionNegate: {
      // Comparison operators inside an if condition.
      std::vector<size_t> sites;
      int paren_depth = 0;
      bool in_cond = false;
      int cond_depth = 0;
      for (size_t i = 0; i < fixed.size(); ++i) {
        if (fixed[i] == "(") ++paren_depth;
        if (fixed[i] == ")") {
          --paren_depth;
          if (in_cond && paren_depth < cond_depth) in_cond = false;
        }
        if (fixed[i] == "if") {
          in_cond = true;
          cond_depth = paren_depth + 1;
        }
        if (in_cond && !negated_comparison(fixed[i]).empty()) sites.push_back(i);
      }
      if (sites.empty()) throw InapplicableMutation("no if-condition comparison");
      size_t at = sites[choose(sites.size())];
      buggy[at] = negated_comparison(fixed[at]);
      break;
    }
    case MutationKind::IdentifierSwap: {
      // Skip the function name (position 1) and callee names (ident before '(').
      std::vector<size_t> sites;
      std::vector<std::string> names;
      for (size_t i = 0; i < fixed.size(); ++i) {
        if (!is_identifier_text(fixed[i])) continue;
        bool is_callee = i + 1 < fixed.size() && fixed[i + 1] == "(";
        if (i == 1 || is_callee) continue;
        sites.push_back(i);
        if (std::find(names.begin(), names.end(), fixed[i]) == names.end())
          names.push_back(fixed[i]);
      }
      if (sites.empty()) throw InapplicableMutation("no identifier site");
      size_t at = sites[choose(sites.size())];
      std::vector<std::string> alts;
      for (const auto& n : names)
        if (n != fixed[at]) alts.push_back(n);
      if (alts.empty()) {
        for (const auto& p : kParamPool)
          if (p != fixed[at]) alts.push_back(p);
      }
      buggy[at] = alts[choose(alts.size())];
      break;
    }
    case MutationKind::TokenDelete: {
      if (fixed.size() < 2) throw InapplicableMutation("program too short to delete from");
      size_t at = choose(fixed.size());
      buggy.erase(buggy.begin() + static_cast<std::ptrdiff_t>(at));
      break;
    }
    case MutationKind::TokenInsert: {
      static const std::vector<std::string> universe = token_universe();
      size_t at = choose(fixed.size() + 1);
      buggy.insert(buggy.begin() + static_cast<std::ptrdiff_t>(at),
                   universe[choose(universe.size())]);
      break;
    }
    case MutationKind::LiteralChange: {
      std::vector<size_t> sites;
      for (size_t i = 0; i < fixed.size(); ++i)
        if (!fixed[i].empty() && std::isdigit(static_cast<unsigned char>(fixed[i][0])))
          sites.push_back(i);
      if (sites.empty()) throw InapplicableMutation("no literal site");
      size_t at = sites[choose(sites.size())];
      int old = std::stoi(fixed[at]);
      int neu = static_cast<int>(choose(9));
      if (neu >= old) ++neu;  // uniform over the other nine digits
      buggy[at] = std::to_string(neu);
      break;
    }
  }
  if (buggy == fixed) throw std::logic_error("mutation produced identical sequence");
  return {std::move(buggy), fixed, kind, seed};
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

std::vector<CorpusRecord> gen_records(const CorpusConfig& config, uint64_t seed) {
  static const std::array<MutationKind, 6> kinds = {
      MutationKind::OperatorSwap,   MutationKind::IdentifierSwap, MutationKind::TokenDelete,
      MutationKind::TokenInsert,    MutationKind::ConditionNegate, MutationKind::LiteralChange};
  std::vector<CorpusRecord> out;
  out.reserve(static_cast<size_t>(config.n));
  for (int i = 0; i < config.n; ++i) {
    uint64_t rec_seed = mix(seed, static_cast<uint64_t>(i) + 1);
    auto fixed = gen_program(rec_seed);
    std::mt19937_64 rng(mix(rec_seed, 0x6b696e64));
    size_t first = rng() % kinds.size();
    for (size_t tries = 0;; ++tries) {
      if (tries == kinds.size()) throw std::logic_error("no applicable mutation");
      MutationKind kind = kinds[(first + tries) % kinds.size()];
      try {
        out.push_back(mutate(fixed, kind, rec_seed));
        break;
      } catch (const InapplicableMutation&) {
      }
    }
  }
  return out;
}

void gen_corpus(const CorpusConfig& config, uint64_t seed, const std::string& out_path,
                const std::string& vocab_path) {
  if (config.n < 0) throw std::runtime_error("corpus size must be non-negative");
  auto records = gen_records(config, seed);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + out_path + " for writing");
  for (const auto& r : records) {
    json j;
    j["buggy"] = r.buggy;
    j["fixed"] = r.fixed;
    j["mutation"] = mutation_name(r.mutation);
    j["seed"] = r.seed;
    out << j.dump() << "\n";
  }
  build_vocab().save(vocab_path);
}

std::string vocab_path_for(const std::string& corpus_path) {
  const std::string ext = ".jsonl";
  if (corpus_path.size() > ext.size() &&
      corpus_path.compare(corpus_path.size() - ext.size(), ext.size(), ext) == 0)
    return corpus_path.substr(0, corpus_path.size() - ext.size()) + ".vocab.json";
  return corpus_path + ".vocab.json";
}

}  // namespace narfix::toylang
