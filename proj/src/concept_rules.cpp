#include "ecgxai/concept_rules.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>

#include "ecgxai/io_util.hpp"

namespace ecgxai::concepts {

enum class Op { Num, Field, Ref, Neg, Abs, Add, Sub, Mul, Div, Gt, Ge, Lt, Le, Eq, Ne, Not, And, Or, Any2 };

struct Node {
  Op op = Op::Num;
  double value = 0.0;
  std::string name;  // field base name or referenced rule
  int bind = 0;      // field: 0 literal, 1 lead X, 2 lead Y
  std::size_t ref = 0;
  std::vector<std::shared_ptr<const Node>> kids;
  std::vector<std::vector<std::string>> groups;
  bool boolean = false;
};

namespace {

using NodePtr = std::shared_ptr<const Node>;

struct Env {
  const std::vector<ConceptRule>* rules;
  const EcgFeatures* features;
  std::string_view x, y;
};

double eval(const Node& n, const Env& env);

bool truth(const Node& n, const Env& env) { return eval(n, env) != 0.0; }

double eval(const Node& n, const Env& env) {
  auto k = [&](std::size_t i) { return eval(*n.kids[i], env); };
  auto cmp = [&](auto pred) {
    const double a = k(0), b = k(1);
    return (!std::isnan(a) && !std::isnan(b) && pred(a, b)) ? 1.0 : 0.0;
  };
  switch (n.op) {
    case Op::Num: return n.value;
    case Op::Field: {
      if (n.bind == 0) return env.features->get(n.name);
      const std::string_view lead = n.bind == 1 ? env.x : env.y;
      return env.features->get(n.name + "_" + std::string(lead));
    }
    case Op::Ref: {
      Env inner{env.rules, env.features, {}, {}};
      return truth(*(*env.rules)[n.ref].root, inner) ? 1.0 : 0.0;
    }
    case Op::Neg: return -k(0);
    case Op::Abs: return std::abs(k(0));
    case Op::Add: return k(0) + k(1);
    case Op::Sub: return k(0) - k(1);
    case Op::Mul: return k(0) * k(1);
    case Op::Div: return k(0) / k(1);
    case Op::Gt: return cmp([](double a, double b) { return a > b; });
    case Op::Ge: return cmp([](double a, double b) { return a >= b; });
    case Op::Lt: return cmp([](double a, double b) { return a < b; });
    case Op::Le: return cmp([](double a, double b) { return a <= b; });
    case Op::Eq: return cmp([](double a, double b) { return a == b; });
    case Op::Ne: return cmp([](double a, double b) { return a != b; });
    case Op::Not: return truth(*n.kids[0], env) ? 0.0 : 1.0;
    case Op::And: return truth(*n.kids[0], env) && truth(*n.kids[1], env) ? 1.0 : 0.0;
    case Op::Or: return truth(*n.kids[0], env) || truth(*n.kids[1], env) ? 1.0 : 0.0;
    case Op::Any2:
      for (const auto& g : n.groups)
        for (const auto& a : g)
          for (const auto& b : g) {
            if (a == b) continue;
            Env inner{env.rules, env.features, a, b};
            if (truth(*n.kids[0], inner)) return 1.0;
          }
      return 0.0;
  }
  return 0.0;
}

class Parser {
 public:
  Parser(std::string_view text, std::string_view rule, const std::map<std::string, std::size_t, std::less<>>& known)
      : s_(text), rule_(rule), known_(known) {}

  NodePtr parse() {
    auto n = disjunction();
    skip();
    if (p_ < s_.size()) fail("unexpected '" + std::string(1, s_[p_]) + "'");
    want_bool(*n, "a rule must be a condition");
    return n;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw RuleSyntaxError("rule '" + std::string(rule_) + "' at column " + std::to_string(p_ + 1) + ": " + msg);
  }
  void skip() {
    while (p_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[p_]))) ++p_;
  }
  bool eat(std::string_view tok) {
    skip();
    if (s_.substr(p_, tok.size()) == tok) {
      p_ += tok.size();
      return true;
    }
    return false;
  }
  void expect(std::string_view tok) {
    if (!eat(tok)) fail("expected '" + std::string(tok) + "'");
  }
  std::string ident() {
    skip();
    const std::size_t b = p_;
    while (p_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[p_])) || s_[p_] == '_')) ++p_;
    if (b == p_) fail("expected an identifier");
    return std::string(s_.substr(b, p_ - b));
  }
  void want_bool(const Node& n, const char* what) const {
    if (!n.boolean) fail(what);
  }
  void want_num(const Node& n, const char* what) const {
    if (n.boolean) fail(what);
  }
  static std::shared_ptr<Node> make(Op op, std::vector<NodePtr> kids, bool boolean) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->kids = std::move(kids);
    n->boolean = boolean;
    return n;
  }

  NodePtr disjunction() {
    auto n = conjunction();
    while (eat("|")) {
      auto r = conjunction();
      want_bool(*n, "'|' needs conditions");
      want_bool(*r, "'|' needs conditions");
      n = make(Op::Or, {n, r}, true);
    }
    return n;
  }
  NodePtr conjunction() {
    auto n = negation();
    while (eat("&")) {
      auto r = negation();
      want_bool(*n, "'&' needs conditions");
      want_bool(*r, "'&' needs conditions");
      n = make(Op::And, {n, r}, true);
    }
    return n;
  }
  NodePtr negation() {
    skip();
    if (s_.substr(p_, 2) != "!=" && eat("!")) {
      auto n = negation();
      want_bool(*n, "'!' needs a condition");
      return make(Op::Not, {n}, true);
    }
    return comparison();
  }
  NodePtr comparison() {
    auto n = sum();
    static const std::pair<std::string_view, Op> ops[] = {{">=", Op::Ge}, {"<=", Op::Le}, {"!=", Op::Ne},
                                                          {">", Op::Gt},  {"<", Op::Lt},  {"=", Op::Eq}};
    for (const auto& [tok, op] : ops)
      if (eat(tok)) {
        auto r = sum();
        want_num(*n, "comparison needs numeric operands");
        want_num(*r, "comparison needs numeric operands");
        return make(op, {n, r}, true);
      }
    return n;
  }
  NodePtr sum() {
    auto n = product();
    for (;;) {
      Op op;
      if (eat("+")) op = Op::Add;
      else if (eat("-")) op = Op::Sub;
      else return n;
      auto r = product();
      want_num(*n, "arithmetic needs numeric operands");
      want_num(*r, "arithmetic needs numeric operands");
      n = make(op, {n, r}, false);
    }
  }
  NodePtr product() {
    auto n = unary();
    for (;;) {
      Op op;
      if (eat("*")) op = Op::Mul;
      else if (eat("/")) op = Op::Div;
      else return n;
      auto r = unary();
      want_num(*n, "arithmetic needs numeric operands");
      want_num(*r, "arithmetic needs numeric operands");
      n = make(op, {n, r}, false);
    }
  }
  NodePtr unary() {
    if (eat("-")) {
      auto n = unary();
      want_num(*n, "unary minus needs a number");
      return make(Op::Neg, {n}, false);
    }
    return primary();
  }
  NodePtr primary() {
    skip();
    if (p_ >= s_.size()) fail("unexpected end of expression");
    const char c = s_[p_];
    if (c == '(') {
      ++p_;
      auto n = disjunction();
      expect(")");
      return n;
    }
    if (c == '[') {
      ++p_;
      const std::size_t end = s_.find(']', p_);
      if (end == std::string_view::npos) fail("unterminated rule reference");
      std::string ref(s_.substr(p_, end - p_));
      const auto it = known_.find(ref);
      if (it == known_.end()) fail("unknown rule reference '" + ref + "'");
      p_ = end + 1;
      auto n = std::make_shared<Node>();
      n->op = Op::Ref;
      n->name = ref;
      n->ref = it->second;
      n->boolean = true;
      return n;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const std::size_t b = p_;
      while (p_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[p_])) || s_[p_] == '.')) ++p_;
      auto n = std::make_shared<Node>();
      n->op = Op::Num;
      try {
        n->value = std::stod(std::string(s_.substr(b, p_ - b)));
      } catch (const std::exception&) {
        fail("malformed number");
      }
      return n;
    }
    const std::string id = ident();
    if (id == "abs") {
      expect("(");
      auto n = disjunction();
      expect(")");
      want_num(*n, "abs() needs a number");
      return make(Op::Abs, {n}, false);
    }
    if (id == "any2") return any2();
    return field(id);
  }
  NodePtr any2() {
    if (in_any2_) fail("any2 cannot be nested");
    expect("(");
    std::vector<std::vector<std::string>> groups;
    do {
      expect("{");
      std::vector<std::string> g;
      do {
        const std::string lead = ident();
        try {
          lead_index(lead);
        } catch (const std::exception&) {
          fail("unknown lead '" + lead + "'");
        }
        g.push_back(lead);
      } while (eat(","));
      expect("}");
      if (g.size() < 2) fail("a lead group needs at least two leads");
      groups.push_back(std::move(g));
    } while (eat(","));
    expect(";");
    in_any2_ = true;
    auto body = disjunction();
    in_any2_ = false;
    expect(")");
    want_bool(*body, "any2 needs a condition");
    auto n = make(Op::Any2, {body}, true);
    n->groups = std::move(groups);
    return n;
  }
  NodePtr field(const std::string& id) {
    auto n = std::make_shared<Node>();
    n->op = Op::Field;
    std::string check = id;
    if (id.size() > 2 && (id.ends_with("_X") || id.ends_with("_Y"))) {
      if (!in_any2_) fail("'" + id + "' is only meaningful inside any2");
      n->bind = id.back() == 'X' ? 1 : 2;
      n->name = id.substr(0, id.size() - 2);
      check = n->name + "_I";
    } else {
      n->name = id;
    }
    const auto& names = feature_names();
    if (std::find(names.begin(), names.end(), check) == names.end()) fail("unknown feature '" + id + "'");
    return n;
  }

  std::string_view s_;
  std::string_view rule_;
  const std::map<std::string, std::size_t, std::less<>>& known_;
  std::size_t p_ = 0;
  bool in_any2_ = false;
};

constexpr std::string_view kBuiltin = R"(# expert concepts over extracted features (amplitudes mV, durations s)
V2V3-MI     := (Q_Dur_V2 > 0.02 & Q_Dur_V3 > 0.02) | (R_Amp_V2 = 0 & R_Amp_V3 = 0)
RPEAK-MI    := R_Dur_V1 > 0.04 & R_Dur_V2 > 0.04 & R_Amp_V1 > 0 & R_Amp_V2 > 0 & T_Amp_V1 > 0 & T_Amp_V2 > 0
               & abs(R_Amp_V1) > abs(S_Amp_V1) & abs(R_Amp_V2) > abs(S_Amp_V2)
QPEAK-MI    := any2({I, aVL}, {V4, V5, V6}, {II, aVF};
                    Q_Dur_X >= 0.03 & abs(Q_Amp_X) >= 0.1 & Q_Dur_Y >= 0.03 & abs(Q_Amp_Y) >= 0.1)
QWAVES-MI   := [V2V3-MI] | [RPEAK-MI] | [QPEAK-MI]
QRS-CLBBB   := QRS_Dur_Global >= 0.12
ST-ELEV-ISC := any2({I, aVL}, {V1, V4, V5, V6}, {II, III, aVF}; ST_Amp_X >= 0.1 & ST_Amp_Y >= 0.1)
               | any2({V1, V2}; (SEX = 0 & AGE >= 40 & ST_Amp_X >= 0.15 & ST_Amp_Y >= 0.15)
                              | (SEX = 0 & AGE < 40 & ST_Amp_X >= 0.15 & ST_Amp_Y >= 0.15)
                              | (SEX = 0 & ST_Amp_X >= 0.15 & ST_Amp_Y >= 0.15))
ST-DEPR-ISC := any2({I, aVL}, {V1, V4, V5, V6}, {II, III, aVF};
                    (ST_Amp_X <= -0.5 & ST_Amp_Y <= -0.5)
                    | (T_Morph_X = -1 & (R_Amp_X > 2 | abs(R_Amp_X) > abs(S_Amp_X))
                       & T_Morph_Y = -1 & (R_Amp_Y > 2 | abs(R_Amp_Y) > abs(S_Amp_Y))))
LI-LVH      := R_Amp_I + S_Amp_III - R_Amp_III - S_Amp_I > 1.6
SLI-LVH     := R_Amp_V5 + S_Amp_V1 > 3.5
RS-LVH      := R_Amp_I > 2 | R_Amp_II > 2 | R_Amp_III > 2 | S_Amp_I > 2 | S_Amp_II > 2 | S_Amp_III > 2
S12-LVH     := S_Amp_V1 > 3 | S_Amp_V2 > 3
R56-LVH     := R_Amp_V5 > 3 | R_Amp_V6 > 3
SEX=FEMALE  := SEX = 1
AGE>75      := AGE >= 75
)";

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

const ConceptRule& RuleSet::add(std::string name, std::string expression) {
  if (name.empty()) throw RuleSyntaxError("rule name is empty");
  if (name.find_first_of("[]") != std::string::npos)
    throw RuleSyntaxError("rule name '" + name + "' contains brackets");
  if (index_.count(name)) throw RuleSyntaxError("rule '" + name + "' is defined twice");
  Parser p(expression, name, index_);
  ConceptRule r{name, expression, p.parse()};
  index_.emplace(name, rules_.size());
  rules_.push_back(std::move(r));
  return rules_.back();
}

RuleSet RuleSet::parse(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> defs;
  std::size_t line_no = 0;
  for (const auto& raw : io::split(text, '\n')) {
    ++line_no;
    std::string line = raw.substr(0, raw.find('#'));
    if (trim(line).empty()) continue;
    const auto pos = line.find(":=");
    if (pos == std::string::npos) {
      if (defs.empty()) throw RuleSyntaxError("line " + std::to_string(line_no) + ": expected 'NAME := expression'");
      defs.back().second += " " + trim(line);
    } else {
      defs.emplace_back(trim(line.substr(0, pos)), trim(line.substr(pos + 2)));
    }
  }
  RuleSet rs;
  for (auto& [n, e] : defs) rs.add(n, e);
  return rs;
}

std::string_view RuleSet::builtin_text() { return kBuiltin; }

RuleSet RuleSet::builtin() { return parse(kBuiltin); }

bool RuleSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

const ConceptRule& RuleSet::rule(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown concept '" + std::string(name) + "'");
  return rules_[it->second];
}

std::vector<std::string> RuleSet::names() const {
  std::vector<std::string> out;
  for (const auto& r : rules_) out.push_back(r.name);
  return out;
}

bool RuleSet::evaluate(std::string_view name, const EcgFeatures& features) const {
  Env env{&rules_, &features, {}, {}};
  return truth(*rule(name).root, env);
}

bool evaluate_rule(const RuleSet& rules, std::string_view name, const EcgFeatures& features) {
  return rules.evaluate(name, features);
}

double mcc(const Contingency& c) {
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (den == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (tp * tn - fp * fn) / std::sqrt(den);
}

Contingency concept_label_contingency(const RuleSet& rules, std::string_view rule, const EcgDataset& dataset,
                                      std::span<const std::size_t> indices, std::string_view label) {
  Contingency c;
  for (std::size_t i : indices) {
    const bool r = rules.evaluate(rule, extract_features(dataset.records[i]));
    const bool y = dataset.records[i].has_label(label);
    (r ? (y ? c.tp : c.fp) : (y ? c.fn : c.tn))++;
  }
  return c;
}

double concept_label_mcc(const RuleSet& rules, std::string_view rule, const EcgDataset& dataset,
                         std::span<const std::size_t> indices, std::string_view label) {
  return mcc(concept_label_contingency(rules, rule, dataset, indices, label));
}

}  // namespace ecgxai::concepts
