#include "narfix/depmat.hpp"

#include <array>

namespace narfix::depmat {

using toylang::Ast;

std::pair<DependencyMatrix, ParentIndexTable> nca_matrix(const Ast& ast, size_t p_max) {
  if (ast.leaves.empty()) throw std::invalid_argument("ast has no leaves");

  ParentIndexTable table;
  std::vector<int> table_of(ast.nodes.size(), kIgnoreIndex);
  // Nodes are already stored in preorder.
  for (size_t n = 0; n < ast.nodes.size(); ++n) {
    if (ast.nodes[n].is_leaf) continue;
    table_of[n] = static_cast<int>(table.node_indices.size());
    table.node_indices.push_back(static_cast<int>(n));
  }
  if (table.size() > p_max)
    throw CapacityError("internal node count " + std::to_string(table.size()) +
                        " exceeds capacity " + std::to_string(p_max));

  const size_t m = ast.leaves.size();
  std::vector<int> depth(ast.nodes.size(), 0);
  for (size_t n = 1; n < ast.nodes.size(); ++n)
    depth[n] = depth[static_cast<size_t>(ast.nodes[n].parent)] + 1;

  DependencyMatrix mat;
  mat.m = m;
  mat.cells.assign(m * m, kIgnoreIndex);
  for (size_t i = 0; i < m; ++i) {
    mat.at(i, i) = table_of[static_cast<size_t>(ast.nodes[static_cast<size_t>(ast.leaves[i])].parent)];
    for (size_t j = i + 1; j < m; ++j) {
      // Equalize depths, then walk both up in lockstep.
      int a = ast.leaves[i], b = ast.leaves[j];
      while (depth[static_cast<size_t>(a)] > depth[static_cast<size_t>(b)])
        a = ast.nodes[static_cast<size_t>(a)].parent;
      while (depth[static_cast<size_t>(b)] > depth[static_cast<size_t>(a)])
        b = ast.nodes[static_cast<size_t>(b)].parent;
      while (a != b) {
        a = ast.nodes[static_cast<size_t>(a)].parent;
        b = ast.nodes[static_cast<size_t>(b)].parent;
      }
      mat.at(i, j) = mat.at(j, i) = table_of[static_cast<size_t>(a)];
    }
  }
  return {std::move(mat), std::move(table)};
}

std::vector<size_t> leaf_alignment(const Ast& ast, const std::vector<std::string>& tokens) {
  if (ast.leaves.size() != tokens.size())
    throw AlignmentError("leaf count " + std::to_string(ast.leaves.size()) +
                         " does not match token count " + std::to_string(tokens.size()));
  std::vector<size_t> map(tokens.size());
  for (size_t i = 0; i < ast.leaves.size(); ++i) {
    const auto& leaf = ast.nodes[static_cast<size_t>(ast.leaves[i])];
    if (leaf.token_pos != static_cast<int>(i) || leaf.label != tokens[i])
      throw AlignmentError("leaf " + std::to_string(i) + " does not match its token");
    map[i] = i;
  }
  return map;
}

std::vector<std::array<int, 3>> to_sparse(const DependencyMatrix& m) {
  std::vector<std::array<int, 3>> out;
  out.reserve(m.m * (m.m + 1) / 2);
  for (size_t i = 0; i < m.m; ++i)
    for (size_t j = i; j < m.m; ++j)
      out.push_back({static_cast<int>(i), static_cast<int>(j), m.at(i, j)});
  return out;
}

DependencyMatrix from_sparse(const std::vector<std::array<int, 3>>& triples, size_t m) {
  DependencyMatrix mat;
  mat.m = m;
  mat.cells.assign(m * m, kIgnoreIndex);
  for (const auto& t : triples) {
    size_t i = static_cast<size_t>(t[0]), j = static_cast<size_t>(t[1]);
    if (i >= m || j >= m) throw std::out_of_range("sparse dependency entry out of range");
    mat.at(i, j) = mat.at(j, i) = t[2];
  }
  return mat;
}

}  // namespace narfix::depmat
