#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace narfix::editlabel {

enum class RepairAction { Keep, Replace, Insert, Delete };

const char* action_name(RepairAction a);
RepairAction action_from_name(const std::string& name);

enum class EditKind { Match, Substitute, Insert, Delete };

// One primitive step of a minimal edit script, in left-to-right order.
// buggy_pos indexes the source token consumed (Match/Substitute/Delete);
// for Insert it is the source position the new token is inserted before.
struct Edit {
  EditKind kind;
  size_t buggy_pos;
  size_t fixed_pos;  // target token produced (Match/Substitute/Insert)
};

// Per-source-token labels. Fragments concatenate to the fixed sequence.
struct RepairLabels {
  std::vector<RepairAction> actions;
  std::vector<int> lengths;
  std::vector<std::vector<std::string>> fragments;
};

struct LabelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Minimal-cost script under unit costs; cost equals Levenshtein distance.
// Backtracking tie-break: match > substitute > delete > insert.
std::vector<Edit> edit_script(const std::vector<std::string>& buggy,
                              const std::vector<std::string>& fixed);

size_t script_cost(const std::vector<Edit>& script);

RepairLabels to_repair_labels(const std::vector<Edit>& script,
                              const std::vector<std::string>& buggy,
                              const std::vector<std::string>& fixed);

std::vector<std::string> apply_labels(const std::vector<std::string>& buggy,
                                      const RepairLabels& labels);

}  // namespace narfix::editlabel
