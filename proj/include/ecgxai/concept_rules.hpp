#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgxai/synth.hpp"

namespace ecgxai::concepts {

/// Raised for malformed rule text, with the offending position.
class RuleSyntaxError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Node;

/// A named boolean predicate over EcgFeatures.
///
/// Expression syntax: `|`, `&`, `!`, comparisons (> >= < <= = !=), `+ - * /`,
/// unary minus, `abs(..)`, parentheses, numbers, feature identifiers,
/// `[NAME]` for a previously defined rule and
/// `any2({I, aVL}, {II, aVF}; expr)`, true when expr holds for two distinct
/// leads X, Y of one group, with `_X` / `_Y` suffixed identifiers bound to
/// them. Comparisons involving NaN are false.
struct ConceptRule {
  std::string name;
  std::string expression;
  std::shared_ptr<const Node> root;
};

class RuleSet {
 public:
  /// Parses and appends a rule; references must name earlier rules.
  const ConceptRule& add(std::string name, std::string expression);

  /// Lines of `NAME := expression`; `#` starts a comment, lines without `:=`
  /// continue the previous rule.
  static RuleSet parse(std::string_view text);
  static RuleSet builtin();
  static std::string_view builtin_text();

  bool contains(std::string_view name) const;
  const ConceptRule& rule(std::string_view name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return rules_.size(); }

  /// Throws std::invalid_argument naming a missing feature.
  bool evaluate(std::string_view name, const EcgFeatures& features) const;

 private:
  std::vector<ConceptRule> rules_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

bool evaluate_rule(const RuleSet& rules, std::string_view name, const EcgFeatures& features);

struct Contingency {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Matthews correlation; NaN when a margin is empty.
double mcc(const Contingency& c);

/// Rule outcome versus label membership over the given records.
Contingency concept_label_contingency(const RuleSet& rules, std::string_view rule, const EcgDataset& dataset,
                                      std::span<const std::size_t> indices, std::string_view label);

double concept_label_mcc(const RuleSet& rules, std::string_view rule, const EcgDataset& dataset,
                         std::span<const std::size_t> indices, std::string_view label);

}  // namespace ecgxai::concepts
