#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "narfix/toylang.hpp"

namespace narfix::depmat {

// Index used for padded pairs; excluded from every loss.
inline constexpr int kIgnoreIndex = -1;

// Internal (non-leaf) nodes of one Ast, enumerated in preorder; index 0 is
// the root. Matrix entries index into this table.
struct ParentIndexTable {
  std::vector<int> node_indices;  // table index -> Ast node index
  size_t size() const { return node_indices.size(); }
};

// m x m symmetric grid of nearest-common-ancestor table indices; the diagonal
// holds each leaf's immediate parent.
struct DependencyMatrix {
  size_t m = 0;
  std::vector<int> cells;  // row-major, m*m

  int& at(size_t i, size_t j) { return cells[i * m + j]; }
  int at(size_t i, size_t j) const { return cells[i * m + j]; }
};

struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AlignmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::pair<DependencyMatrix, ParentIndexTable> nca_matrix(const toylang::Ast& ast,
                                                         size_t p_max = 64);

// Bijection between leaves (left to right) and token positions; the parser
// guarantees it is the identity, and a mismatch is an error.
std::vector<size_t> leaf_alignment(const toylang::Ast& ast,
                                   const std::vector<std::string>& tokens);

// Sparse serialization: upper triangle plus diagonal as [i, j, idx] triples.
std::vector<std::array<int, 3>> to_sparse(const DependencyMatrix& m);
DependencyMatrix from_sparse(const std::vector<std::array<int, 3>>& triples, size_t m);

}  // namespace narfix::depmat
