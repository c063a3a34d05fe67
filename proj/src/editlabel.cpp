#include "narfix/editlabel.hpp"

#include <algorithm>

namespace narfix::editlabel {

const char* action_name(RepairAction a) {
  switch (a) {
    case RepairAction::Keep: return "keep";
    case RepairAction::Replace: return "replace";
    case RepairAction::Insert: return "insert";
    case RepairAction::Delete: return "delete";
  }
  return "?";
}

RepairAction action_from_name(const std::string& name) {
  if (name == "keep") return RepairAction::Keep;
  if (name == "replace") return RepairAction::Replace;
  if (name == "insert") return RepairAction::Insert;
  if (name == "delete") return RepairAction::Delete;
  throw LabelError("unknown repair action '" + name + "'");
}

namespace {

// Pair each run of consecutive deletes/inserts into substitutes first, so the
// remaining raw edits are unambiguous to group.
std::vector<Edit> canonicalize(const std::vector<Edit>& script) {
  std::vector<Edit> out;
  out.reserve(script.size());
  size_t i = 0;
  while (i < script.size()) {
    if (script[i].kind == EditKind::Match || script[i].kind == EditKind::Substitute) {
      out.push_back(script[i++]);
      continue;
    }
    std::vector<Edit> dels, inss;
    while (i < script.size() &&
           (script[i].kind == EditKind::Delete || script[i].kind == EditKind::Insert)) {
      (script[i].kind == EditKind::Delete ? dels : inss).push_back(script[i]);
      ++i;
    }
    size_t paired = std::min(dels.size(), inss.size());
    for (size_t k = 0; k < paired; ++k)
      out.push_back({EditKind::Substitute, dels[k].buggy_pos, inss[k].fixed_pos});
    for (size_t k = paired; k < dels.size(); ++k) out.push_back(dels[k]);
    for (size_t k = paired; k < inss.size(); ++k) out.push_back(inss[k]);
  }
  return out;
}

}  // namespace

std::vector<Edit> edit_script(const std::vector<std::string>& buggy,
                              const std::vector<std::string>& fixed) {
  const size_t n = buggy.size(), m = fixed.size();
  // suf[i][j] = distance between buggy[i..) and fixed[j..).
  std::vector<std::vector<int>> suf(n + 1, std::vector<int>(m + 1, 0));
  for (size_t i = 0; i <= n; ++i) suf[i][m] = static_cast<int>(n - i);
  for (size_t j = 0; j <= m; ++j) suf[n][j] = static_cast<int>(m - j);
  for (size_t i = n; i-- > 0;)
    for (size_t j = m; j-- > 0;) {
      int best = suf[i + 1][j + 1] + (buggy[i] == fixed[j] ? 0 : 1);
      best = std::min(best, suf[i + 1][j] + 1);
      best = std::min(best, suf[i][j + 1] + 1);
      suf[i][j] = best;
    }

  // Walk left to right, tie-break match > substitute > delete > insert.
  std::vector<Edit> script;
  size_t i = 0, j = 0;
  while (i < n || j < m) {
    if (i < n && j < m && buggy[i] == fixed[j] && suf[i][j] == suf[i + 1][j + 1]) {
      script.push_back({EditKind::Match, i, j});
      ++i, ++j;
    } else if (i < n && j < m && suf[i][j] == suf[i + 1][j + 1] + 1) {
      script.push_back({EditKind::Substitute, i, j});
      ++i, ++j;
    } else if (i < n && suf[i][j] == suf[i + 1][j] + 1) {
      script.push_back({EditKind::Delete, i, j});
      ++i;
    } else {
      script.push_back({EditKind::Insert, i, j});
      ++j;
    }
  }
  return script;
}

size_t script_cost(const std::vector<Edit>& script) {
  size_t c = 0;
  for (const auto& e : script)
    if (e.kind != EditKind::Match) ++c;
  return c;
}

RepairLabels to_repair_labels(const std::vector<Edit>& script,
                              const std::vector<std::string>& buggy,
                              const std::vector<std::string>& fixed) {
  RepairLabels labels;
  const size_t n = buggy.size();
  labels.actions.assign(n, RepairAction::Keep);
  labels.lengths.assign(n, 0);
  labels.fragments.assign(n, {});

  auto canon = canonicalize(script);

  // Raw inserts attach to the nearest following aligned token, in front of its
  // own target fragment; inserts after the last aligned token attach behind it.
  std::vector<std::string> pending;
  long last_aligned = -1;
  for (const auto& e : canon) {
    switch (e.kind) {
      case EditKind::Match:
      case EditKind::Substitute: {
        if (e.buggy_pos >= n || e.fixed_pos >= fixed.size())
          throw LabelError("edit script position out of range");
        size_t i = e.buggy_pos;
        auto& frag = labels.fragments[i];
        frag = pending;
        pending.clear();
        frag.push_back(fixed[e.fixed_pos]);
        if (frag.size() > 1)
          labels.actions[i] = RepairAction::Insert;
        else
          labels.actions[i] =
              e.kind == EditKind::Match ? RepairAction::Keep : RepairAction::Replace;
        labels.lengths[i] = static_cast<int>(frag.size());
        last_aligned = static_cast<long>(i);
        break;
      }
      case EditKind::Delete:
        if (e.buggy_pos >= n) throw LabelError("edit script position out of range");
        labels.actions[e.buggy_pos] = RepairAction::Delete;
        labels.lengths[e.buggy_pos] = 0;
        break;
      case EditKind::Insert:
        if (e.fixed_pos >= fixed.size()) throw LabelError("edit script position out of range");
        pending.push_back(fixed[e.fixed_pos]);
        break;
    }
  }
  if (!pending.empty()) {
    if (last_aligned < 0) throw LabelError("insert-only script has no attachment token");
    auto& frag = labels.fragments[static_cast<size_t>(last_aligned)];
    frag.insert(frag.end(), pending.begin(), pending.end());
    labels.actions[static_cast<size_t>(last_aligned)] = RepairAction::Insert;
    labels.lengths[static_cast<size_t>(last_aligned)] = static_cast<int>(frag.size());
  }

  if (apply_labels(buggy, labels) != fixed)
    throw LabelError("edit script does not reconstruct the fixed sequence");
  return labels;
}

std::vector<std::string> apply_labels(const std::vector<std::string>& buggy,
                                      const RepairLabels& labels) {
  if (labels.actions.size() != buggy.size() || labels.lengths.size() != buggy.size() ||
      labels.fragments.size() != buggy.size())
    throw LabelError("label arity does not match the buggy sequence");
  std::vector<std::string> out;
  for (size_t i = 0; i < buggy.size(); ++i) {
    if (static_cast<int>(labels.fragments[i].size()) != labels.lengths[i])
      throw LabelError("fragment length disagrees with recorded length");
    out.insert(out.end(), labels.fragments[i].begin(), labels.fragments[i].end());
  }
  return out;
}

}  // namespace narfix::editlabel
